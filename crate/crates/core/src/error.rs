use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid physical constants: {0}")]
    InvalidConstants(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("field amplitude {amplitude:.3e} below floor near {location:?}")]
    NodeInDomain { location: [f64; 4], amplitude: f64 },
    #[error("density {density:.3e} below floor at {location:?}")]
    DensityZero { location: [f64; 4], density: f64 },
    #[error("point {point:?} outside the field domain (margin {margin:.3e})")]
    OutOfDomain { point: [f64; 4], margin: f64 },
    #[error("expected a point in the {expected} frame, got {found}")]
    FrameMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("curve left the domain at t = {t:.6e}, state {point:?}")]
    LeftDomain { t: f64, point: [f64; 4] },
    #[error("integrator step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StepFailure { t: f64, h: f64 },
    #[error("no sign change bracketing the reference surface above q = {q:?}")]
    NoBracket { q: [f64; 3] },
    #[error("vanishing time derivative of the phase at {point:?}")]
    ZeroSlope { point: [f64; 4] },
    #[error("root finding failed: {0}")]
    RootFailure(String),
    #[error("spatial metric not positive definite at q = {q:?} (min eigenvalue {min_eigenvalue:.3e})")]
    NotSpacelike { q: [f64; 3], min_eigenvalue: f64 },
    #[error("path {path} exceeded the explosion bound at step {step}")]
    Explosion { path: u64, step: u64 },
    #[error("only {count} samples in bin {bin}, need {required}")]
    InsufficientSamples {
        bin: usize,
        count: usize,
        required: usize,
    },
    #[error("density tail mass {tail:.3e} at the quadrature box exceeds {tolerance:.3e}")]
    QuadratureDivergence { tail: f64, tolerance: f64 },
    #[error("negative radicand {radicand:.6e} in the action integrand at t = {t:.6e}")]
    ImaginaryAction { t: f64, radicand: f64 },
    #[error("vanishing J^0 at {point:?}")]
    ZeroJ0 { point: [f64; 4] },
    #[error("singular matrix: {0}")]
    Singular(String),
}

pub type Result<T> = std::result::Result<T, Error>;
