use thiserror::Error;

/// Errors raised by models, filters, smoothers and oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmcError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("particle collapse at t={t}: every importance weight is zero")]
    ParticleCollapse { t: usize },

    #[error("non-finite importance weight at t={t}, particle {particle}")]
    NonFiniteWeight { t: usize, particle: usize },

    #[error("degenerate backward kernel at t={t}: transition density vanishes on every particle for next index {next}")]
    DegenerateBackwardKernel { t: usize, next: usize },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("transition density bound violated at s={s}: proposal index {index} for path {path} gives m = {value} > sigma_plus = {bound}")]
    BoundViolation {
        s: usize,
        index: usize,
        path: usize,
        value: f64,
        bound: f64,
    },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("instance too large for enumeration: {size} outcomes exceeds the limit of {limit}")]
    Infeasible { size: u128, limit: u128 },

    #[error("impossible observation at t={t}: total likelihood is zero")]
    ImpossibleObservation { t: usize },
}

pub type Result<T, E = SmcError> = std::result::Result<T, E>;
