use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure surfaced by the toolkit.
///
/// [`Error::kind`] gives a stable identifier used in machine-readable error
/// reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("discretization error: {0}")]
    Discretization(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("near resonance: estimated condition number {cond:.3e} exceeds cap {cap:.1e}")]
    NearResonance { cond: f64, cap: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("boundary data violates incompressibility: net flux {flux:.3e} (tolerance {tol:.1e})")]
    IncompatibleData { flux: f64, tol: f64 },

    #[error("shear modulus below admissible minimum: {0}")]
    ContrastViolation(String),

    #[error("insufficient resolution: {0}")]
    InsufficientResolution(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("step size fell below floor {floor:.3e} without decreasing the misfit")]
    StalledStep { floor: f64 },

    #[error("symbol coefficient is zero; the operator is not elliptic at this point")]
    ZeroCoefficient,

    #[error("half-plane split violated: {0}")]
    HalfPlaneSplitViolation(String),

    #[error("field has nonzero boundary trace ({max_trace:.3e} vs scale {scale:.3e}); fractional norm undefined")]
    NonzeroTrace { max_trace: f64, scale: f64 },

    #[error("weighted field is unbounded near the boundary (ratio {ratio:.3e} > cap {cap:.1e})")]
    UnboundedWeightedField { ratio: f64, cap: f64 },

    #[error("eigen-iteration did not converge: {0}")]
    ConvergenceFailure(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Discretization(_) => "DiscretizationError",
            Error::InvalidInput(_) => "InvalidInput",
            Error::GridMismatch(_) => "GridMismatch",
            Error::NearResonance { .. } => "NearResonance",
            Error::SingularSystem(_) => "SingularSystem",
            Error::IncompatibleData { .. } => "IncompatibleData",
            Error::ContrastViolation(_) => "ContrastViolation",
            Error::InsufficientResolution(_) => "InsufficientResolution",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::StalledStep { .. } => "StalledStep",
            Error::ZeroCoefficient => "ZeroCoefficient",
            Error::HalfPlaneSplitViolation(_) => "HalfPlaneSplitViolation",
            Error::NonzeroTrace { .. } => "NonzeroTrace",
            Error::UnboundedWeightedField { .. } => "UnboundedWeightedField",
            Error::ConvergenceFailure(_) => "ConvergenceFailure",
            Error::MissingData(_) => "MissingData",
            Error::Parse(_) => "ParseError",
            Error::Io(_) => "IoError",
        }
    }
}
