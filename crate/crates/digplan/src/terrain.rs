//! Polynomial ground representation and excavation-geometry checks.
//!
//! The earth surface and the target shape are polynomials in `x` over a
//! region of interest, expressed in the cabin frame. Digging runs toward the
//! cabin, so a tip path is ordered by strictly decreasing `x`. All volumes
//! are per unit bucket width; the capacity curve is scaled by the width when
//! it is built from the machine configuration.

use serde::{Deserialize, Serialize};

use crate::error::TerrainError;
use crate::model::params::BucketGeometry;

/// Which polynomial layer of the ground model to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundLayer {
    Surface,
    Target,
}

/// Polynomial earth surface and target shape over a region of interest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundModel {
    /// Surface coefficients, ascending degree.
    pub surface_coeffs: Vec<f64>,
    /// Target-shape coefficients, ascending degree.
    pub target_coeffs: Vec<f64>,
    pub x_min_m: f64,
    pub x_max_m: f64,
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

impl GroundModel {
    /// Validate the region and the surface-above-target invariant on a dense
    /// grid of at least 1000 samples.
    pub fn validate(&self) -> Result<(), TerrainError> {
        let n = 1000;
        for i in 0..=n {
            let x = self.x_min_m + (self.x_max_m - self.x_min_m) * i as f64 / n as f64;
            let gap = self.surface(x) - self.target(x);
            if gap < 0.0 {
                return Err(TerrainError::TargetAboveSurface { x, gap });
            }
        }
        Ok(())
    }

    /// Evaluate a layer inside the region of interest.
    pub fn eval(&self, layer: GroundLayer, x: f64) -> Result<f64, TerrainError> {
        if x < self.x_min_m || x > self.x_max_m {
            return Err(TerrainError::OutOfRegion {
                x,
                x_min: self.x_min_m,
                x_max: self.x_max_m,
            });
        }
        Ok(match layer {
            GroundLayer::Surface => self.surface(x),
            GroundLayer::Target => self.target(x),
        })
    }

    /// Surface height; the polynomial extends smoothly outside the region,
    /// which the planner relies on while iterating.
    pub fn surface(&self, x: f64) -> f64 {
        horner(&self.surface_coeffs, x)
    }

    /// Target height, extended like [`Self::surface`].
    pub fn target(&self, x: f64) -> f64 {
        horner(&self.target_coeffs, x)
    }

    /// Exact surface integral from the polynomial antiderivative.
    pub fn surface_integral(&self, from: f64, to: f64) -> f64 {
        let anti = |x: f64| {
            self.surface_coeffs
                .iter()
                .enumerate()
                .fold(0.0, |acc, (k, c)| acc + c * x.powi(k as i32 + 1) / (k as f64 + 1.0))
        };
        anti(to) - anti(from)
    }
}

/// One waypoint of a bucket-tip path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipWaypoint {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
}

/// Ordered tip waypoints of a digging pass, `x` strictly decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TipPath {
    pub waypoints: Vec<TipWaypoint>,
}

impl TipPath {
    pub fn new(waypoints: Vec<TipWaypoint>) -> Result<Self, TerrainError> {
        if waypoints.len() < 3 {
            return Err(TerrainError::DegenerateSegment { i: 0, j: 0 });
        }
        for i in 1..waypoints.len() {
            let (a, b) = (&waypoints[i - 1], &waypoints[i]);
            if a.x == b.x && a.z == b.z {
                return Err(TerrainError::DegenerateSegment { i: i - 1, j: i });
            }
        }
        Ok(Self { waypoints })
    }

    pub fn segments(&self) -> usize {
        self.waypoints.len() - 1
    }

    /// Interpolated path height at `x`, which must lie within the swept
    /// x-range `[x_last, x_first]`.
    pub fn height_at(&self, x: f64) -> Option<f64> {
        let first = self.waypoints.first()?.x;
        let last = self.waypoints.last()?.x;
        if x > first || x < last {
            return None;
        }
        for w in self.waypoints.windows(2) {
            let (a, b) = (w[0], w[1]);
            if x <= a.x && x >= b.x {
                if (a.x - b.x).abs() < 1e-15 {
                    return Some(a.z.min(b.z));
                }
                let t = (x - a.x) / (b.x - a.x);
                return Some(a.z + t * (b.z - a.z));
            }
        }
        None
    }
}

/// Swept cross-section between the surface and the tip path, per unit bucket
/// width: exact surface integral minus the trapezoidal path term.
pub fn swept_volume(path: &TipPath, ground: &GroundModel) -> Result<f64, TerrainError> {
    let n2 = path.segments();
    let x0 = path.waypoints[0].x;
    let xn = path.waypoints[n2].x;
    if xn >= x0 {
        return Err(TerrainError::PathOrdering {
            x_first: x0,
            x_last: xn,
        });
    }
    let mut weighted = path.waypoints[0].z + path.waypoints[n2].z;
    for w in &path.waypoints[1..n2] {
        weighted += 2.0 * w.z;
    }
    let surface = ground.surface_integral(xn, x0);
    Ok(surface - weighted / (2.0 * n2 as f64) * (x0 - xn))
}

/// Retainable volume as a function of bucket rotation: zero below the
/// emptying threshold, a smoothstep ramp, then the geometric maximum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CapacityCurve {
    pub theta_empty: f64,
    pub theta_full: f64,
    pub v_max: f64,
}

impl CapacityCurve {
    /// Per-unit-width curve from the bucket configuration.
    pub fn per_width(geometry: &BucketGeometry) -> Self {
        CapacityCurve {
            theta_empty: geometry.theta_empty_rad,
            theta_full: geometry.theta_full_rad,
            v_max: geometry.capacity_m3 / geometry.width_m,
        }
    }
}

/// Bucket capacity at rotation `theta`; rotations at or past pi spill over
/// the wrist and are rejected.
pub fn bucket_capacity(theta: f64, curve: &CapacityCurve) -> Result<f64, TerrainError> {
    if theta >= std::f64::consts::PI {
        return Err(TerrainError::WristSpill { theta });
    }
    Ok(if theta <= curve.theta_empty {
        0.0
    } else if theta >= curve.theta_full {
        curve.v_max
    } else {
        let s = (theta - curve.theta_empty) / (curve.theta_full - curve.theta_empty);
        curve.v_max * s * s * (3.0 - 2.0 * s)
    })
}

/// Which branch limited the excavated volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolumeBranch {
    SweptActive,
    CapacityActive,
}

/// Excavated volume and its limiting branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcavatedVolume {
    pub value: f64,
    pub swept: f64,
    pub capacity: f64,
    pub branch: VolumeBranch,
}

/// The realizable haul: swept volume clipped by the final-rotation capacity.
pub fn excavated_volume(
    path: &TipPath,
    ground: &GroundModel,
    curve: &CapacityCurve,
) -> Result<ExcavatedVolume, TerrainError> {
    let swept = swept_volume(path, ground)?;
    let theta_end = path.waypoints[path.segments()].theta;
    let capacity = bucket_capacity(theta_end, curve)?;
    let (value, branch) = if capacity <= swept {
        (capacity, VolumeBranch::CapacityActive)
    } else {
        (swept, VolumeBranch::SweptActive)
    };
    Ok(ExcavatedVolume {
        value,
        swept,
        capacity,
        branch,
    })
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w > std::f64::consts::PI {
        w -= two_pi;
    } else if w <= -std::f64::consts::PI {
        w += two_pi;
    }
    w
}

/// Clearance between the bottom plate and the tip velocity direction at
/// waypoint `i >= 1`; the velocity direction uses backward differences.
/// Positive means the plate clears the cut.
pub fn clearance_angle(path: &TipPath, i: usize, plate_offset: f64) -> Result<f64, TerrainError> {
    assert!(i >= 1 && i < path.waypoints.len());
    let (prev, cur) = (path.waypoints[i - 1], path.waypoints[i]);
    let (dx, dz) = (cur.x - prev.x, cur.z - prev.z);
    if dx == 0.0 && dz == 0.0 {
        return Err(TerrainError::DegenerateSegment { i: i - 1, j: i });
    }
    let velocity_angle = dz.atan2(dx);
    Ok(wrap_angle(cur.theta - plate_offset - velocity_angle))
}

/// Collision triangle of the bucket shell, anchored at the tip and oriented
/// by the bottom plate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BucketShell {
    pub tip_to_heel: f64,
    pub tip_to_pin: f64,
    /// Angle from the bucket carrier rotation back to the plate direction.
    pub plate_offset: f64,
    /// Extra rotation lifting the upper vertex above the trailing plate.
    pub pin_lift: f64,
}

impl BucketShell {
    pub fn from_geometry(geometry: &BucketGeometry) -> Self {
        BucketShell {
            tip_to_heel: geometry.tip_to_heel_m,
            tip_to_pin: geometry.tip_to_pin_m,
            plate_offset: geometry.plate_angle_offset_rad,
            pin_lift: geometry.pin_lift_angle_rad,
        }
    }

    /// Triangle vertices `[tip, heel, pin]` at a waypoint pose.
    pub fn vertices(&self, w: &TipWaypoint) -> [(f64, f64); 3] {
        let plate = w.theta - self.plate_offset;
        let heel = (
            w.x - self.tip_to_heel * plate.cos(),
            w.z - self.tip_to_heel * plate.sin(),
        );
        let lifted = plate + self.pin_lift;
        let pin = (
            w.x - self.tip_to_pin * lifted.cos(),
            w.z - self.tip_to_pin * lifted.sin(),
        );
        [(w.x, w.z), heel, pin]
    }
}

/// Signed clearance of the bucket shell above the tip path at waypoint `i`:
/// the minimum over the triangle vertices of the vertex height above the
/// path polyline, with vertices outside the swept x-range compared against
/// the uncut surface instead. Non-negative means feasible.
pub fn body_above_path(
    path: &TipPath,
    i: usize,
    shell: &BucketShell,
    ground: &GroundModel,
) -> f64 {
    let vertices = shell.vertices(&path.waypoints[i]);
    let mut min_clearance = f64::INFINITY;
    for (vx, vz) in vertices {
        let reference = match path.height_at(vx) {
            Some(z) => z,
            None => ground.surface(vx),
        };
        min_clearance = min_clearance.min(vz - reference);
    }
    min_clearance
}

/// Worst violation of each digging constraint; zero means satisfied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Region membership, band containment and surface attachment of the
    /// endpoints (m).
    pub band: f64,
    /// Monotone bucket rotation (rad).
    pub monotone_rotation: f64,
    /// Positive clearance angle (rad).
    pub clearance: f64,
    /// Bucket shell above the tip path (m).
    pub body: f64,
    /// Rotation below pi (rad).
    pub wrist: f64,
    /// Index of the worst violation, if any.
    pub worst_index: usize,
}

impl FeasibilityReport {
    pub fn worst(&self) -> f64 {
        self.band
            .max(self.monotone_rotation)
            .max(self.clearance)
            .max(self.body)
            .max(self.wrist)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() <= tol
    }
}

/// Check the five digging constraints with the given tolerance and report
/// the worst violation per constraint.
pub fn validate_phase2(path: &TipPath, ground: &GroundModel, shell: &BucketShell) -> FeasibilityReport {
    let mut report = FeasibilityReport::default();
    let mut worst = f64::NEG_INFINITY;
    let n = path.waypoints.len() - 1;
    for (i, w) in path.waypoints.iter().enumerate() {
        // 1) region of interest, band containment, endpoints on the surface
        let mut band: f64 = (ground.x_min_m - w.x).max(w.x - ground.x_max_m);
        band = band.max(ground.target(w.x) - w.z).max(w.z - ground.surface(w.x));
        if i == 0 || i == n {
            band = band.max((w.z - ground.surface(w.x)).abs());
        }
        report.band = report.band.max(band);
        // 2) monotone rotation
        let monotone = if i > 0 {
            path.waypoints[i - 1].theta - w.theta
        } else {
            0.0
        };
        report.monotone_rotation = report.monotone_rotation.max(monotone);
        // 3) positive clearance angle
        let clearance = if i > 0 {
            -clearance_angle(path, i, shell.plate_offset).unwrap_or(-std::f64::consts::PI)
        } else {
            0.0
        };
        report.clearance = report.clearance.max(clearance);
        // 4) shell above the path
        let body = -body_above_path(path, i, shell, ground);
        report.body = report.body.max(body);
        // 5) rotation below pi
        let wrist = w.theta - std::f64::consts::PI;
        report.wrist = report.wrist.max(wrist);

        let local = band.max(monotone).max(clearance).max(body).max(wrist);
        if local > worst {
            worst = local;
            report.worst_index = i;
        }
    }
    report
}
