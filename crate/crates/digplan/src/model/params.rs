//! Machine parameters and their validated loader.
//!
//! OEM values for production excavators are proprietary, so the bundled
//! defaults describe a plausible 30-tonne-class machine. Every quantity is
//! loaded from a TOML file whose key names carry explicit units; the loader
//! rejects any value that breaks a model invariant and names the offending
//! key.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::ConfigError;

/// One rotating body of the working arm (boom, arm or bucket).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkParams {
    /// Pivot-to-pivot length of the link (m). For the bucket this is the
    /// pin-to-tip distance used by the forward kinematics.
    pub length_m: f64,
    pub mass_kg: f64,
    /// Centre-of-mass offset from the proximal pivot along the link axis (m).
    pub com_offset_m: f64,
    /// Planar inertia about the centre of mass (kg m^2).
    pub inertia_kg_m2: f64,
    /// Fixed anchor-to-pivot distance of the drive triangle (m).
    pub linkage_a_m: f64,
    /// Moving anchor-to-pivot distance of the drive triangle (m).
    pub linkage_b_m: f64,
    /// Angle offset so that the triangle opens by `offset + theta` (rad).
    pub linkage_angle_offset_rad: f64,
}

/// Bucket shell geometry used by the collision triangle and capacity curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketGeometry {
    /// Tip-to-heel distance along the bottom plate (m).
    pub tip_to_heel_m: f64,
    /// Distance from the tip to the shell's upper collision vertex (m).
    pub tip_to_pin_m: f64,
    /// Angle from the bucket link direction back to the bottom plate (rad).
    pub plate_angle_offset_rad: f64,
    /// Extra lift of the upper collision vertex above the trailing plate (rad).
    pub pin_lift_angle_rad: f64,
    /// Rotation below which the bucket holds nothing (rad).
    pub theta_empty_rad: f64,
    /// Rotation at which the bucket reaches its full capacity (rad).
    pub theta_full_rad: f64,
    /// Geometric capacity of the bucket (m^3).
    pub capacity_m3: f64,
    /// Bucket width used to convert per-width volumes (m).
    pub width_m: f64,
}

/// Direction-dependent metering areas of one pump, per actuator.
///
/// Entries follow the input ordering `[swing, boom, arm, bucket]`. Cylinder
/// entries are piston areas (m^2); the swing entry is the effective motor
/// displacement per radian of cabin rotation (m^3/rad).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PumpAreas {
    pub expand_areas_m2: [f64; 4],
    pub contract_areas_m2: [f64; 4],
}

/// Actuation and motion limits of the machine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhysicalLimits {
    /// Lower input bound `[N m, N, N, N]`.
    pub input_lower: [f64; 4],
    /// Upper input bound `[N m, N, N, N]`.
    pub input_upper: [f64; 4],
    /// Total hydraulic power bound (W).
    pub power_upper_w: f64,
    /// Cylinder displacement bounds (m), ordering `[boom, arm, bucket]`.
    pub cylinder_lower_m: [f64; 3],
    pub cylinder_upper_m: [f64; 3],
    /// Rate bounds in cylinder coordinates `[rad/s, m/s, m/s, m/s]`.
    pub velocity_lower: [f64; 4],
    pub velocity_upper: [f64; 4],
    /// Flow bound of each pump (m^3/s).
    pub pump_flow_upper_m3_s: [f64; 2],
    pub pump1: PumpAreas,
    pub pump2: PumpAreas,
}

/// Full parameter set of the machine model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    pub gravity_m_s2: f64,
    /// Yaw inertia of cabin plus undercarriage-borne superstructure (kg m^2).
    pub cabin_yaw_inertia_kg_m2: f64,
    /// Boom pivot position in the cabin frame (m).
    pub boom_pivot_x_m: f64,
    pub boom_pivot_z_m: f64,
    pub boom: LinkParams,
    pub arm: LinkParams,
    pub bucket: LinkParams,
    pub bucket_geometry: BucketGeometry,
    pub limits: PhysicalLimits,
}

impl ModelParams {
    /// Load and validate a parameter file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let params: ModelParams = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        params.validate()?;
        Ok(params)
    }

    /// Check every model invariant; the error names the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| -> Result<(), ConfigError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("must be > 0, got {v}")))
            }
        };
        positive("gravity_m_s2", self.gravity_m_s2)?;
        positive("cabin_yaw_inertia_kg_m2", self.cabin_yaw_inertia_kg_m2)?;
        for (name, link) in [
            ("boom", &self.boom),
            ("arm", &self.arm),
            ("bucket", &self.bucket),
        ] {
            positive(&format!("{name}.length_m"), link.length_m)?;
            positive(&format!("{name}.mass_kg"), link.mass_kg)?;
            positive(&format!("{name}.inertia_kg_m2"), link.inertia_kg_m2)?;
            positive(&format!("{name}.linkage_a_m"), link.linkage_a_m)?;
            positive(&format!("{name}.linkage_b_m"), link.linkage_b_m)?;
            if link.com_offset_m < 0.0 || link.com_offset_m > link.length_m {
                return Err(ConfigError::invalid(
                    format!("{name}.com_offset_m"),
                    "must lie within [0, length_m]",
                ));
            }
        }
        let bg = &self.bucket_geometry;
        positive("bucket_geometry.tip_to_heel_m", bg.tip_to_heel_m)?;
        positive("bucket_geometry.tip_to_pin_m", bg.tip_to_pin_m)?;
        positive("bucket_geometry.capacity_m3", bg.capacity_m3)?;
        positive("bucket_geometry.width_m", bg.width_m)?;
        if !(0.0 < bg.theta_empty_rad
            && bg.theta_empty_rad < bg.theta_full_rad
            && bg.theta_full_rad < std::f64::consts::PI)
        {
            return Err(ConfigError::invalid(
                "bucket_geometry.theta_empty_rad",
                "need 0 < theta_empty < theta_full < pi",
            ));
        }
        self.limits.validate("limits")?;
        // The cylinder boxes must map to linkage angles strictly inside
        // (0, pi), otherwise the length map loses monotonicity somewhere in
        // the admissible range.
        for (idx, (name, link)) in [
            ("boom", &self.boom),
            ("arm", &self.arm),
            ("bucket", &self.bucket),
        ]
        .into_iter()
        .enumerate()
        {
            let (a, b) = (link.linkage_a_m, link.linkage_b_m);
            let lo = self.limits.cylinder_lower_m[idx];
            let hi = self.limits.cylinder_upper_m[idx];
            if lo <= (a - b).abs() || hi >= a + b {
                return Err(ConfigError::invalid(
                    format!("limits.cylinder_lower_m[{idx}]"),
                    format!(
                        "{name} cylinder box [{lo}, {hi}] must lie strictly inside \
                         the triangle-inequality range ({}, {})",
                        (a - b).abs(),
                        a + b
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Links in chain order `[boom, arm, bucket]`.
    pub fn links(&self) -> [&LinkParams; 3] {
        [&self.boom, &self.arm, &self.bucket]
    }
}

impl PhysicalLimits {
    fn validate(&self, prefix: &str) -> Result<(), ConfigError> {
        for i in 0..4 {
            if !(self.input_lower[i] < self.input_upper[i]) {
                return Err(ConfigError::invalid(
                    format!("{prefix}.input_lower[{i}]"),
                    "lower input bound must be below upper",
                ));
            }
            if !(self.velocity_lower[i] < self.velocity_upper[i]) {
                return Err(ConfigError::invalid(
                    format!("{prefix}.velocity_lower[{i}]"),
                    "lower velocity bound must be below upper",
                ));
            }
        }
        for i in 0..3 {
            if !(self.cylinder_lower_m[i] < self.cylinder_upper_m[i]) {
                return Err(ConfigError::invalid(
                    format!("{prefix}.cylinder_lower_m[{i}]"),
                    "lower cylinder bound must be below upper",
                ));
            }
        }
        if !(self.power_upper_w > 0.0) {
            return Err(ConfigError::invalid(
                format!("{prefix}.power_upper_w"),
                "must be > 0",
            ));
        }
        for (i, f) in self.pump_flow_upper_m3_s.iter().enumerate() {
            if !(*f > 0.0) {
                return Err(ConfigError::invalid(
                    format!("{prefix}.pump_flow_upper_m3_s[{i}]"),
                    "must be > 0",
                ));
            }
        }
        for (pump, areas) in [("pump1", &self.pump1), ("pump2", &self.pump2)] {
            for i in 0..4 {
                if !(areas.expand_areas_m2[i] > 0.0) || !(areas.contract_areas_m2[i] > 0.0) {
                    return Err(ConfigError::invalid(
                        format!("{prefix}.{pump}.expand_areas_m2[{i}]"),
                        "all metering areas must be > 0",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Per-channel input normalization factor: the larger magnitude bound.
    pub fn input_scale(&self) -> [f64; 4] {
        let mut s = [0.0; 4];
        for i in 0..4 {
            s[i] = self.input_upper[i].abs().max(self.input_lower[i].abs());
        }
        s
    }
}

impl Default for ModelParams {
    /// Plausible 30-tonne-class machine; see `configs/model.toml`.
    fn default() -> Self {
        let boom = LinkParams {
            length_m: 6.0,
            mass_kg: 2000.0,
            com_offset_m: 2.7,
            inertia_kg_m2: 6000.0,
            linkage_a_m: 1.8,
            linkage_b_m: 2.0,
            linkage_angle_offset_rad: 1.45,
        };
        let arm = LinkParams {
            length_m: 3.0,
            mass_kg: 1000.0,
            com_offset_m: 1.35,
            inertia_kg_m2: 750.0,
            linkage_a_m: 1.1,
            linkage_b_m: 2.6,
            linkage_angle_offset_rad: 2.9,
        };
        let bucket = LinkParams {
            length_m: 1.5,
            mass_kg: 800.0,
            com_offset_m: 0.7,
            inertia_kg_m2: 150.0,
            linkage_a_m: 1.05,
            linkage_b_m: 1.05,
            linkage_angle_offset_rad: -0.85,
        };
        let bucket_geometry = BucketGeometry {
            tip_to_heel_m: 1.1,
            tip_to_pin_m: 0.9,
            plate_angle_offset_rad: 2.45,
            pin_lift_angle_rad: 0.2,
            theta_empty_rad: 0.5,
            theta_full_rad: 1.4,
            capacity_m3: 1.0,
            width_m: 1.2,
        };
        let shared = PumpAreas {
            expand_areas_m2: [0.001, 0.015, 0.012, 0.006],
            contract_areas_m2: [0.001, 0.009, 0.0075, 0.004],
        };
        let limits = PhysicalLimits {
            input_lower: [-100_000.0, -500_000.0, -350_000.0, -250_000.0],
            input_upper: [100_000.0, 900_000.0, 600_000.0, 400_000.0],
            power_upper_w: 200_000.0,
            cylinder_lower_m: [1.75, 1.65, 0.21],
            cylinder_upper_m: [3.24, 2.95, 2.09],
            velocity_lower: [-0.4, -0.15, -0.2, -0.3],
            velocity_upper: [0.4, 0.15, 0.2, 0.3],
            pump_flow_upper_m3_s: [0.0045, 0.0045],
            pump1: shared.clone(),
            pump2: shared,
        };
        ModelParams {
            gravity_m_s2: 9.81,
            cabin_yaw_inertia_kg_m2: 60_000.0,
            boom_pivot_x_m: 0.5,
            boom_pivot_z_m: 1.8,
            boom,
            arm,
            bucket,
            bucket_geometry,
            limits,
        }
    }
}
