use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("integration interval is empty, reversed or not finite")]
    InvalidInterval,
    #[error("integrand produced a non-finite value")]
    NonFinite,
    #[error("quadrature did not converge: value {value:e}, error estimate {abs_error:e} > requested {requested:e}")]
    NotConverged {
        value: f64,
        abs_error: f64,
        requested: f64,
    },
}

/// Rejection reasons for a raw parameter bundle.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("integrability hypothesis violated: alpha = {0} but alpha < 1 is required for the spectral measure to have finite mass")]
    AlphaTooLarge(f64),
    #[error("decay-rate hypothesis violated: beta = {0} but beta >= 0 is required")]
    BetaNegative(f64),
    #[error("dimension d = {0} but d >= 2 is required")]
    DimensionTooSmall(usize),
    #[error("support bound K = {0} must be positive")]
    SupportNotPositive(f64),
    #[error("molecular diffusivity kappa = {0} must be nonnegative")]
    KappaNegative(f64),
    #[error("shell plateau a(0) = {0} must be positive")]
    PlateauNotPositive(f64),
    #[error("taper start {taper_start} must lie strictly inside (0, K = {support_k}) for a monotone taper")]
    NonMonotoneTaper { taper_start: f64, support_k: f64 },
    #[error("parameter {0} is not a finite number")]
    NotFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("parameters are outside the anomalous regime (alpha + beta = {sum} <= 1): {what} diverges")]
    OutsideAnomalousRegime { sum: f64, what: &'static str },
    #[error("wavevector has zero length; the spectral density is singular at the origin")]
    ZeroWavevector,
    #[error("expected a {expected}-dimensional vector, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("mode count must be at least 1")]
    NoModes,
    #[error("alpha = {0} >= 1: spectral measure has infinite mass and cannot be sampled")]
    NotNormalizable(f64),
    #[error("invalid sampling strategy: {0}")]
    InvalidStrategy(String),
    #[error("mode {index} is malformed: {reason}")]
    MalformedMode { index: usize, reason: String },
    #[error("expected a {expected}-dimensional vector, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TracerError {
    #[error("invalid tracer configuration: {0}")]
    InvalidConfig(String),
    #[error("step {step}: displacement {displacement:e} per micro-step exceeds a tenth of the shortest wavelength {wavelength:e}; reduce dt_micro")]
    StepTooLarge {
        step: u64,
        displacement: f64,
        wavelength: f64,
    },
    #[error("non-finite position at micro-step {step}")]
    NonFinite { step: u64 },
    #[error("trajectory {id} (master seed {master_seed}) failed: {source}")]
    Trajectory {
        id: u64,
        master_seed: u64,
        #[source]
        source: Box<TracerError>,
    },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("trajectory grid does not match the lag grid: {0}")]
    GridMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("mean squared displacement is not positive at lag {lag}")]
    NonPositiveMsd { lag: f64 },
    #[error("degenerate fit window: {0}")]
    DegenerateWindow(String),
    #[error("covariance matrix is not positive definite even after regularization")]
    NotPositiveDefinite,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("trajectory id {0} present in both statistics fragments")]
    DuplicateTrajectory(u64),
}
