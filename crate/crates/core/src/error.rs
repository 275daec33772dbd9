use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not a rotation (orthogonality residual {residual:.3e})")]
    NotARotation { residual: f64 },

    #[error("matrix is not an element of SE2(3)")]
    NotAGroupElement,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("joint {joint} angle {angle} rad is outside the leg's limits")]
    JointLimit { joint: usize, angle: f64 },

    #[error("contact point is out of the leg's reach")]
    OutOfReach,

    #[error("contact {0} is not active")]
    InactiveContact(u32),

    #[error("time step {dt} s outside (0, {max}]")]
    InvalidTimestep { dt: f64, max: f64 },

    #[error("innovation covariance is singular (condition number {condition:.3e})")]
    SingularInnovation { condition: f64 },

    #[error("timestamp {t} s precedes previous event at {previous} s")]
    NonMonotonicTimestamp { t: f64, previous: f64 },

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("filter diverged at t = {t} s (trace of P = {trace:.3e})")]
    Diverged { t: f64, trace: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}
