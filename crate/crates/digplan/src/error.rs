//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by kinematics, dynamics and limit evaluation.
#[derive(Debug, Clone, Error)]
pub enum ModelError {
    /// A linkage angle left the open interval (0, pi) where the
    /// cylinder-length map is monotone.
    #[error("linkage {linkage} angle {angle} rad outside (0, pi)")]
    LinkageAngleOutOfRange { linkage: &'static str, angle: f64 },

    /// A cylinder length violates the triangle inequality of its linkage.
    #[error("cylinder {linkage} length {length} m outside ({min}, {max})")]
    TriangleViolation {
        linkage: &'static str,
        length: f64,
        min: f64,
        max: f64,
    },

    /// sin(phi0 + theta) fell below the singularity guard.
    #[error("linkage {linkage} near kinematic singularity (sin = {sine})")]
    NearSingularity { linkage: &'static str, sine: f64 },

    /// A tip pose is outside the reachable workspace.
    #[error("tip pose ({x}, {z}, {theta}) unreachable: {reason}")]
    Unreachable {
        x: f64,
        z: f64,
        theta: f64,
        reason: &'static str,
    },

    /// Non-finite value encountered in a state or input.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
}

/// Errors raised by terrain and excavation-geometry queries.
#[derive(Debug, Clone, Error)]
pub enum TerrainError {
    #[error("x = {x} m outside region of interest [{x_min}, {x_max}]")]
    OutOfRegion { x: f64, x_min: f64, x_max: f64 },

    #[error("path must run toward the cabin: x_last = {x_last} >= x_first = {x_first}")]
    PathOrdering { x_first: f64, x_last: f64 },

    #[error("waypoints {i} and {j} coincide in (x, z)")]
    DegenerateSegment { i: usize, j: usize },

    #[error("bucket rotation {theta} rad >= pi spills over the wrist")]
    WristSpill { theta: f64 },

    #[error("target lies above surface at x = {x} m (gap {gap} m)")]
    TargetAboveSurface { x: f64, gap: f64 },
}

/// Errors raised by the global planner.
#[derive(Debug, Clone, Error)]
pub enum PlanError {
    #[error("phase-2 seed infeasible: {report}")]
    InfeasibleSeed { report: String },

    #[error("boundary state outside limits: {what}")]
    InfeasibleBoundary { what: String },

    #[error("phase junction {junction} discontinuous: component {component} differs by {residual}")]
    Discontinuity {
        junction: &'static str,
        component: usize,
        residual: f64,
    },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Terrain(#[from] TerrainError),
}

/// Errors raised while loading or validating configuration files.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },

    /// Validation failure, reported with the offending key path.
    #[error("invalid config: {key}: {message}")]
    Invalid { key: String, message: String },
}

/// Errors raised by the simulation harness.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("plant state diverged at t = {t} s: {what}")]
    Diverged { t: f64, what: String },

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Plan(#[from] PlanError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            message: message.into(),
        }
    }
}
