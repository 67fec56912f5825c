use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("orbit left the phase space at step {step}")]
    OrbitEscape { step: i64 },
    #[error("singular or nonfinite Jacobian at cocycle step {step}")]
    DegenerateCocycle { step: usize },
    #[error("stable/unstable splitting degenerate: angle {angle:e}")]
    SplittingDegenerate { angle: f64 },
    #[error("no finite Pesin certificate: required constant {required:e} exceeds cap")]
    NoFiniteCertificate { required: f64 },
    #[error("rectangle chart is not injective: {0}")]
    ChartDegenerate(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("branch crossing failed: {0}")]
    CrossFail(String),
    #[error("cone condition failed at {point:?} for vector {vector:?}")]
    ConeFail { point: [f64; 2], vector: [f64; 2] },
    #[error("diameter {diameter:e} of iterate {j} exceeds {delta:e}")]
    DiamFail { j: usize, diameter: f64, delta: f64 },
    #[error("base point not quasi-generic: test function {index} residual {residual:e}")]
    QgFail { index: usize, residual: f64 },
    #[error("budget exhausted after {examined} candidates with {found} branches certified")]
    BudgetExhausted { found: usize, examined: usize, diagnostics: Vec<String> },
    #[error("cylinders of branches {i} and {j} do not cross")]
    CrossingIncomplete { i: usize, j: usize },
    #[error("branch cylinders overlap: {0}")]
    Overlap(String),
    #[error("enumeration of {requested} cylinders exceeds cap {cap}")]
    CapExceeded { requested: u64, cap: u64 },
    #[error("itinerary exhausted after {covered} of {needed} steps")]
    InsufficientItinerary { covered: usize, needed: usize },
    #[error("all branch base points lie on one periodic orbit")]
    AtomicBranchSet,
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
