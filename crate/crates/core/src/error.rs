use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("custom schedule integrand is not finite at t = {t}")]
    NonFiniteIntegrand { t: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("need at least {min} steps, got {got}")]
    TooFewSteps { min: usize, got: usize },

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("time {t} is a pinned endpoint of the bridge (c_t = 0)")]
    PinnedEndpoint { t: f64 },

    #[error("step must go backwards in time: r = {r}, t = {t}")]
    InvalidStep { t: f64, r: f64 },

    #[error("closed-form Brownian oracle requires a unit Brownian bridge: {0}")]
    NotBrownian(String),

    #[error("endpoint statistics missing for the EDM-style precondition")]
    MissingStats,

    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("tapes are not compatible: {0}")]
    TapeMismatch(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::TimeOutOfRange { .. } => "time_out_of_range",
            Error::InvalidSchedule(_) => "invalid_schedule",
            Error::NonFiniteIntegrand { .. } => "non_finite_integrand",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::TooFewSteps { .. } => "too_few_steps",
            Error::NonFiniteState { .. } => "non_finite_state",
            Error::PinnedEndpoint { .. } => "pinned_endpoint",
            Error::InvalidStep { .. } => "invalid_step",
            Error::NotBrownian(_) => "not_brownian",
            Error::MissingStats => "missing_stats",
            Error::TooFewSamples { .. } => "too_few_samples",
            Error::Config(_) => "config",
            Error::InvalidPlan(_) => "invalid_plan",
            Error::TapeMismatch(_) => "tape_mismatch",
            Error::Diverged { .. } => "diverged",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::VerificationFailed(_) => "verification_failed",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
