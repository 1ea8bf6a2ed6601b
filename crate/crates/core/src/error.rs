use thiserror::Error;

/// Errors produced by the smoothing, estimation and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid quantile level tau = {0}; expected 0 < tau < 1")]
    InvalidTau(f64),

    #[error("invalid Huber threshold c = {0}; expected c > 0")]
    InvalidHuberThreshold(f64),

    #[error("invalid smoothing scale m = {0}; expected m > 0")]
    InvalidScale(f64),

    #[error("invalid bandwidth h = {0}; expected 0 < h < 1")]
    InvalidBandwidth(f64),

    #[error("derivative order {0} is not supported (max 2)")]
    UnsupportedOrder(u32),

    #[error("absolute moment of order {0} is not supported (max 2)")]
    UnsupportedMoment(u32),

    #[error("closed form is not available for {loss} with the {kernel} kernel")]
    ClosedFormUnavailable { loss: String, kernel: String },

    #[error("cannot parse loss specification {0:?}; expected abs, check:<tau>, huber:<c> or relu")]
    LossSyntax(String),

    #[error("unknown kernel {0:?}; expected gaussian or bump")]
    KernelSyntax(String),

    #[error("curvature undefined: density is discontinuous at kink {0}")]
    CurvatureUndefined(f64),

    #[error("invalid curvature constant a = {0}; expected a > 0")]
    InvalidCurvature(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("design matrix is rank deficient")]
    SingularDesign,

    #[error("Gram matrix is singular")]
    SingularGram,

    #[error("loss is not coercive; estimation requires a loss with a unique minimum")]
    NonCoerciveLoss,

    #[error("regressor x[{0}] is zero; the breakpoint y/x is undefined")]
    DegenerateRegressor(usize),

    #[error("exact quantile oracle supports d = 1 only (got d = {0})")]
    UnsupportedDimension(usize),

    #[error("sample lacks true errors or parameters")]
    IncompleteSample,

    #[error("n = {0} is too small for the loglog normalisation (need n >= 16)")]
    SampleTooSmall(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{excluded} of {total} replications failed, above the 1% limit")]
    TooManyFailures { excluded: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
