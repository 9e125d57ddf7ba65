use digplan::model::{CylinderState, ModelParams};
use digplan::mpc::{pack_state, MpcConfig, MpcPlanner};
use nalgebra::Vector4;

fn main() {
    let p = ModelParams::default();
    let mut planner = MpcPlanner::new(MpcConfig::default());
    let q = Vector4::new(0.0, 2.5, 2.2, 1.0);
    let x0 = CylinderState::new(q, Vector4::new(0.05, 0.01, -0.02, 0.03));
    // Reference ramping away from the start: active tracking.
    let (a, b) = digplan::mpc::discretize(0.02);
    let accel = Vector4::new(0.1, 0.04, -0.05, 0.08);
    let mut reference = vec![pack_state(&CylinderState::at_rest(q))];
    for k in 0..50 {
        reference.push(a * reference[k] + b * accel);
    }
    let delta = Vector4::new(500.0, -2000.0, 1500.0, -300.0);
    let mut times = Vec::new();
    let mut iters = Vec::new();
    for step in 0..60 {
        // march the reference window forward one step each time
        let x_cur = if step == 0 {
            x0
        } else {
            digplan::mpc::unpack_state(&reference[1])
        };
        let sol = planner.solve(&p, &x_cur, &reference, &delta).unwrap();
        times.push(sol.solve_time_s * 1e3);
        iters.push(sol.iterations);
        let last = *reference.last().unwrap();
        reference.remove(0);
        reference.push(a * last + b * accel);
    }
    let mean: f64 = times.iter().sum::<f64>() / times.len() as f64;
    let max = times.iter().cloned().fold(0.0_f64, f64::max);
    println!("mean {:.2} ms, max {:.2} ms, first {:.2} ms", mean, max, times[0]);
    println!("iters: {:?}", &iters[..12]);
}
