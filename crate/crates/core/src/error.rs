use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("windowing error: {0}")]
    Windowing(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("selected {achievable} of {requested} requested ego clusters")]
    Selection { requested: usize, achievable: usize },

    #[error("relative effect undefined for zero control mean (absolute effect {absolute})")]
    UndefinedRelativeEffect { absolute: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }
}
