use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no outcomes")]
    NoOutcomes,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("rank-deficient design: all x values are equal")]
    RankDeficient,

    #[error("empty class `{0}`")]
    EmptyClass(String),

    #[error("class `{class}` has {available} candidates but {requested} were requested (shortfall {shortfall})", shortfall = requested - available)]
    Shortfall {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("class `{class}`: {remaining} images could not be placed after falling back to the top bin")]
    FallbackExhausted { class: String, remaining: usize },

    #[error("dimension mismatch: expected {expected}, found {found} (`{id}`)")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("duplicate model `{0}`")]
    DuplicateModel(String),

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("no rows")]
    NoRows,

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for errors caused by bad input data rather than a failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::NoOutcomes
                | Error::Parameter(_)
                | Error::EmptyClass(_)
                | Error::DimensionMismatch { .. }
                | Error::ShapeMismatch(_)
                | Error::UnknownModel(_)
                | Error::DuplicateModel(_)
                | Error::Malformed { .. }
                | Error::NoRows
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Image(_)
        )
    }
}
