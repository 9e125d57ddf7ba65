// placed as an example target for quick probing
use digplan::model::ModelParams;
use digplan::planner::phase2::{plan_phase2, Phase2Problem};
use digplan::solver::SolveOptions;
use digplan::terrain::{BucketShell, CapacityCurve, GroundModel};
use nalgebra::Vector3;

fn main() {
    let params = ModelParams::default();
    let ground = GroundModel {
        surface_coeffs: vec![0.0],
        target_coeffs: vec![-0.12],
        x_min_m: 4.0,
        x_max_m: 8.0,
    };
    for (wd, wv, outer, inner) in [
        (0.05, 40.0, 20, 120),
    ] {
        let p = Phase2Problem {
            ground: ground.clone(),
            travel_weight: wd,
            volume_weight: wv,
            travel_metric: Vector3::new(1.0, 1.0, 1.0),
            segment_count: 20,
            capacity: CapacityCurve::per_width(&params.bucket_geometry),
            shell: BucketShell::from_geometry(&params.bucket_geometry),
            entry_x: 7.4,
            exit_x: 4.8,
            seed_clearance: 0.25,
            min_clearance: 5e-3,
            solve: SolveOptions {
                max_outer: outer,
                max_inner: inner,
                feasibility_tol: 5e-7,
                max_step: 0.1,
                initial_penalty: 50.0,
                trace: true,
                ..Default::default()
            },
        };
        let t0 = std::time::Instant::now();
        match plan_phase2(&params, &p, 0.0) {
            Ok(plan) => {
                let n2 = plan.tip_path.segments();
                let close = plan.tip_path.waypoints[1..n2]
                    .iter()
                    .filter(|w| w.z - ground.target(w.x) <= 0.03)
                    .count();
                let worst_gap = plan.tip_path.waypoints[1..n2]
                    .iter()
                    .map(|w| w.z - ground.target(w.x))
                    .fold(0.0_f64, f64::max);
                println!(
                    "wd={wd} wv={wv} o={outer} i={inner}: close {close}/19 worst_gap {worst_gap:.4} V={:.3} swept={:.3} cap={:.3} cost {:.3} (seed {:.3}) conv={} iters={}/{} wall {:?}",
                    plan.volume.value, plan.volume.swept, plan.volume.capacity,
                    plan.cost, plan.seed_cost, plan.converged,
                    plan.outer_iterations, plan.inner_iterations, t0.elapsed()
                );
            }
            Err(e) => println!("wd={wd} wv={wv}: ERR {e}"),
        }
    }
}
