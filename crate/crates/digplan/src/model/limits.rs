//! Physical-limit residual evaluation.
//!
//! Every residual is oriented so that `>= 0` means feasible: force/torque
//! box, overall power bound, cylinder displacement box and the two pump
//! flow-rate bounds with direction-dependent metering areas.

use nalgebra::Vector4;

use super::params::{PhysicalLimits, PumpAreas};
use super::state::{ControlInput, CylinderState};

/// Residual vector layout produced by [`constraint_residuals`].
///
/// Rows: `0..4` input lower, `4..8` input upper, `8` power, `9..12`
/// displacement lower, `12..15` displacement upper, `15..17` pump flow.
pub const RESIDUAL_COUNT: usize = 17;

/// Names of the four residual families, used in logs and reports.
pub const FAMILY_NAMES: [&str; 4] = ["force", "power", "displacement", "flow"];

/// Family index of each residual row.
pub fn family_of_row(row: usize) -> usize {
    match row {
        0..=7 => 0,
        8 => 1,
        9..=14 => 2,
        _ => 3,
    }
}

/// Flow through one pump for the given cylinder-coordinate rates.
pub fn pump_flow(areas: &PumpAreas, dq_l: &Vector4<f64>) -> f64 {
    let mut flow = 0.0;
    for i in 0..4 {
        let area = if dq_l[i] >= 0.0 {
            areas.expand_areas_m2[i]
        } else {
            areas.contract_areas_m2[i]
        };
        flow += area * dq_l[i].abs();
    }
    flow
}

/// Evaluate all limit residuals at a state/input pair.
pub fn constraint_residuals(
    limits: &PhysicalLimits,
    x: &CylinderState,
    u: &ControlInput,
) -> [f64; RESIDUAL_COUNT] {
    let mut r = [0.0; RESIDUAL_COUNT];
    for i in 0..4 {
        r[i] = u.0[i] - limits.input_lower[i];
        r[4 + i] = limits.input_upper[i] - u.0[i];
    }
    r[8] = limits.power_upper_w - u.0.dot(&x.dq);
    for i in 0..3 {
        r[9 + i] = x.q[i + 1] - limits.cylinder_lower_m[i];
        r[12 + i] = limits.cylinder_upper_m[i] - x.q[i + 1];
    }
    r[15] = limits.pump_flow_upper_m3_s[0] - pump_flow(&limits.pump1, &x.dq);
    r[16] = limits.pump_flow_upper_m3_s[1] - pump_flow(&limits.pump2, &x.dq);
    r
}

/// Row-wise normalization factors so residuals become dimensionless
/// "fractions of the limit".
pub fn residual_scales(limits: &PhysicalLimits) -> [f64; RESIDUAL_COUNT] {
    let mut s = [1.0; RESIDUAL_COUNT];
    let input_scale = limits.input_scale();
    for i in 0..4 {
        s[i] = input_scale[i];
        s[4 + i] = input_scale[i];
    }
    s[8] = limits.power_upper_w;
    for i in 0..3 {
        let span = limits.cylinder_upper_m[i] - limits.cylinder_lower_m[i];
        s[9 + i] = span;
        s[12 + i] = span;
    }
    s[15] = limits.pump_flow_upper_m3_s[0];
    s[16] = limits.pump_flow_upper_m3_s[1];
    s
}

/// Minimum residual per family, normalized by the family scale.
pub fn family_minima(residuals: &[f64; RESIDUAL_COUNT], scales: &[f64; RESIDUAL_COUNT]) -> [f64; 4] {
    let mut minima = [f64::INFINITY; 4];
    for (row, (r, s)) in residuals.iter().zip(scales.iter()).enumerate() {
        let fam = family_of_row(row);
        minima[fam] = minima[fam].min(r / s);
    }
    minima
}
