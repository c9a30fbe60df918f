use thiserror::Error;

/// Errors shared across the estimation pipeline.
///
/// Every variant carries a stable machine-readable code (see [`DdrError::code`])
/// so callers such as the CLI can emit `error: <code>: <message>` lines without
/// string-matching on display text.
#[derive(Debug, Error)]
pub enum DdrError {
    /// Outcome minimum equals maximum, so no evaluation grid can be built.
    #[error("zero outcome range: outcome minimum equals maximum ({0})")]
    ZeroOutcomeRange(f64),

    /// Outcome sample standard deviation is zero (or not finite).
    #[error("degenerate outcome: sample standard deviation is {0}")]
    DegenerateOutcome(f64),

    /// All pairwise covariate distances are zero; no kernel bandwidth exists.
    #[error("degenerate covariates: all pairwise distances are zero")]
    DegenerateCovariates,

    /// The regularized kernel system could not be factorized even after
    /// escalating diagonal jitter.
    #[error("ill-conditioned system: Cholesky failed with jitter up to {max_jitter:e}")]
    IllConditioned { max_jitter: f64 },

    /// A leave-one-out leverage reached 1 within tolerance, so the closed-form
    /// deleted residual would divide by (numerically) zero.
    #[error("leverage saturation: H[{index},{index}] = {leverage} >= 1 - 1e-12")]
    LeverageSaturation { index: usize, leverage: f64 },

    /// Every hyperparameter combination in the search failed.
    #[error("no viable hyperparameters: all {tried} combinations failed (first: {first_failure})")]
    NoViableHyperparameters { tried: usize, first_failure: String },

    /// Too few permutations to resolve the requested significance level.
    #[error("insufficient permutations for alpha = 0.05: B = {0} < 19")]
    InsufficientPermutations(usize),

    /// Both standard errors (or variances) are zero; the test statistic is
    /// undefined.
    #[error("degenerate standard error: {0}")]
    DegenerateStandardError(String),

    /// A treatment arm is too small to fit.
    #[error("arm too small: arm '{label}' has {size} samples, need at least {min}")]
    ArmTooSmall { label: String, size: usize, min: usize },

    /// A treatment arm label that the model or dataset does not contain.
    #[error("unknown arm: '{label}' not present (available: {available})")]
    UnknownArm { label: String, available: String },

    /// Structurally invalid input: dimension mismatches, non-finite values,
    /// out-of-range settings. The message names the offending argument.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl DdrError {
    /// Stable machine-readable code for this error.
    pub fn code(&self) -> &'static str {
        match self {
            DdrError::ZeroOutcomeRange(_) => "zero_outcome_range",
            DdrError::DegenerateOutcome(_) => "degenerate_outcome",
            DdrError::DegenerateCovariates => "degenerate_covariates",
            DdrError::IllConditioned { .. } => "ill_conditioned",
            DdrError::LeverageSaturation { .. } => "leverage_saturation",
            DdrError::NoViableHyperparameters { .. } => "no_viable_hyperparameters",
            DdrError::InsufficientPermutations(_) => "insufficient_permutations",
            DdrError::DegenerateStandardError(_) => "degenerate_standard_error",
            DdrError::ArmTooSmall { .. } => "arm_too_small",
            DdrError::UnknownArm { .. } => "unknown_arm",
            DdrError::InvalidInput(_) => "invalid_input",
        }
    }
}

pub type Result<T> = std::result::Result<T, DdrError>;

pub(crate) fn invalid(msg: impl Into<String>) -> DdrError {
    DdrError::InvalidInput(msg.into())
}
