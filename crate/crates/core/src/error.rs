use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("probability {0} outside the open interval (0, 1)")]
    Domain(f64),
    #[error("invalid level: alpha = {0} must lie in (0, 1)")]
    InvalidLevel(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("need at least two parameters, got {0}")]
    TooFewParameters(usize),
    #[error("sample size must be positive")]
    ZeroSampleSize,
    #[error("target index {index} out of range for {k} parameters")]
    TargetOutOfRange { index: usize, k: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("covariance is not symmetric (relative asymmetry {0:.3e})")]
    Asymmetric(f64),
    #[error("constraint-on-target-only: the constraint gradient is a multiple of the target basis vector")]
    ConstraintOnTargetOnly,
    #[error("zero-constraint: the constraint gradient is zero")]
    ZeroConstraint,
    #[error("not-positive-definite: covariance is not positive definite on the span of the target and constraint directions")]
    NotPositiveDefinite,
    #[error("degenerate-constraint: a'Va = {0:.3e} is numerically zero")]
    DegenerateConstraint(f64),
    #[error("not-reducible: the target estimate is uncorrelated with the constraint (e'Va = 0)")]
    NotReducible,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("true parameter violates the inequality: g(theta) = {0}")]
    InfeasibleTruth(f64),
    #[error("quadrature did not converge (error estimate {0:.3e})")]
    Quadrature(f64),
    #[error("likelihood-ratio acceptance set is not an interval ({0} sign changes)")]
    DisconnectedAcceptance(usize),
    #[error("covariance matrix is singular")]
    SingularCovariance,
    #[error("rank-deficient: {0}")]
    RankDeficient(String),
    #[error("degenerate clusters: {0}")]
    DegenerateClusters(String),
    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("invalid constraint `{0}`")]
    ConstraintParse(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}
