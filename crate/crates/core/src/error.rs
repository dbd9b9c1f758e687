use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("field evaluation produced a non-finite value at ({x}, {y}, {theta})")]
    NonFinite { x: f64, y: f64, theta: f64 },

    #[error("point ({x}, {y}) lies outside the disc of radius {radius}")]
    OutsideDomain { x: f64, y: f64, radius: f64 },

    #[error("|Y| = {norm:e} is below the denominator threshold")]
    ZeroDenominator { norm: f64 },

    #[error("frame is degenerate at ({x}, {y}, {theta}): determinant {det:e}")]
    DegenerateFrame { x: f64, y: f64, theta: f64, det: f64 },

    #[error("Y vanishes at ({x}, {y}, {theta})")]
    VanishingField { x: f64, y: f64, theta: f64 },

    #[error("orbit left the domain at time {time}")]
    LeftDomain { time: f64 },

    #[error("step size underflow at time {time} (h = {step:e})")]
    StepUnderflow { time: f64, step: f64 },

    #[error("no crossing of the target fiber within time horizon {horizon}")]
    NoCrossing { horizon: f64 },

    #[error("flow is not transverse to the fibration near time {time}")]
    NotTransverse { time: f64 },

    #[error("angle unwrapping failed: {0}")]
    UnwrapFailure(String),

    #[error("winding/degree value {raw} is not close to an integer (residual {residual})")]
    NonIntegral { raw: f64, residual: f64 },

    #[error("point lies within {threshold:e} of a pole")]
    AtPole { threshold: f64 },

    #[error("degenerate triangle {index}: {reason}")]
    DegenerateTriangle { index: usize, reason: String },

    #[error("field vanishes on the sphere around the zero (|X| = {norm:e})")]
    ZeroOnSphere { norm: f64 },

    #[error("field vanishes on the essential torus (|X| = {norm:e})")]
    ZeroOnTorus { norm: f64 },

    #[error("loop at offset {offset} meets the collinearity locus (residual {residual:e})")]
    LoopMeetsCol { offset: f64, residual: f64 },

    #[error("segment meets the collinearity locus")]
    SegmentMeetsCol,

    #[error("point is not fixed by the return map (displacement {displacement:e})")]
    NotFixed { displacement: f64 },

    #[error("point is fixed by the return map; the ratio is undefined")]
    FixedPoint,

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
