//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("metric is not positive definite: {0}")]
    NonPositiveDefinite(String),
    #[error("derivative estimate exceeds configured bound ({0}); grid is under-resolved")]
    DerivativeBlowup(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("operation needs {needed} slices, got {got}")]
    InsufficientSlices { needed: usize, got: usize },
    #[error("decay violation: fitted rate p = {fitted:.4} does not exceed {required:.4}")]
    DecayViolation { fitted: f64, required: f64 },
    #[error("fit or extrapolation did not converge: {0}")]
    NonConvergent(String),
    #[error("area must be positive, got {0}")]
    NonPositiveArea(f64),
    #[error("parabolicity lost: mean curvature H <= 0 at t = {0}")]
    ParabolicityLost(f64),
    #[error("lapse left the admissible range [{min}, {max}] at t = {t}")]
    LapseBlowup { t: f64, min: f64, max: f64 },
    #[error("time step underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("bridge is degenerate: lapse stays at 1, boundary mean curvatures agree identically")]
    BridgeDegenerate,
    #[error("mollification width delta = {delta} exceeds collar half-width {epsilon}")]
    DeltaTooLarge { delta: f64, epsilon: f64 },
    #[error("invalid mollifier kernel: {0}")]
    KernelInvalid(String),
    #[error("linear solver diverged: {0}")]
    SolverDiverged(String),
    #[error("quadrature under-resolved: {0}")]
    QuadratureUnderResolved(String),
    #[error("conformal factor must be positive, min was {0}")]
    NonPositiveFactor(f64),
    #[error("extension is not in the admissible class: {0}")]
    NotInExtensionClass(String),
    #[error("degenerate input: boundary mean curvatures agree identically, nothing to reduce")]
    DegenerateInput,
    #[error("snapshot format error: {0}")]
    Snapshot(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
