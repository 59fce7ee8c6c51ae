use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("degenerate geometry: zero distance on link {link}")]
    DegenerateGeometry { link: String },

    #[error("cancelling channels: beamformer sum has zero norm")]
    CancellingChannels,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("energy causality violated for user {user}: consumed {consumed:e} J > harvested {harvested:e} J")]
    CausalityViolation {
        user: usize,
        consumed: f64,
        harvested: f64,
    },

    #[error("oracle requires N = {expected}, instance has N = {got}")]
    OracleSize { expected: usize, got: usize },

    #[error("grid of {requested} evaluations exceeds the budget of {budget}")]
    GridBudget { requested: u128, budget: u128 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}
