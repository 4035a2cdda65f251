use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("simulation diverged at t = {t}")]
    SimulationDiverged { t: usize },

    #[error("inverse noise filter diverged at t = {t}")]
    FilterDiverged { t: usize },

    #[error("PLR iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("regressor is rank deficient: rank {rank} < required {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("Hankel coverage: missing strings {missing:?}")]
    Coverage { missing: Vec<String> },

    #[error("realization rank collapse at n_x = {n_x}: singular values {singular_values:?}")]
    RankCollapse { n_x: usize, singular_values: Vec<f64> },

    #[error("degenerate reference signal: {0}")]
    DegenerateReference(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("run seed {seed}: {source}")]
    Run {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("all {0} Monte-Carlo runs failed")]
    AllRunsFailed(usize),

    #[error("internal: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
