use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// The normal matrix lost positive definiteness while factoring the
    /// given diagonal block (0-based).
    #[error("normal system is singular or ill-conditioned: factorization failed at block {block}")]
    NotObservableOrIllConditioned { block: usize },

    #[error("observability matrix is rank deficient: rank {rank} < n = {n}")]
    RankDeficient { rank: usize, n: usize },

    #[error("simulation diverged at step {step}: |x| = {value:e}")]
    SimulationDiverged { step: usize, value: f64 },

    #[error(
        "fit diverged at iteration {iteration}: loss {loss:e} exceeds {factor:e} x initial loss \
         {initial:e}; step size eta = {eta} is too large for this data"
    )]
    FitDiverged {
        iteration: usize,
        loss: f64,
        initial: f64,
        factor: f64,
        eta: f64,
    },

    #[error("could not draw a non-divergent initial condition after {attempts} attempts")]
    NoBoundedInitialCondition { attempts: usize },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
