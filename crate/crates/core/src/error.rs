use thiserror::Error;

/// Errors surfaced by the library. CLI maps these onto process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: cannot parse `{value}` in column `{column}` as a number")]
    BadNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("remap range too small: need {needed} addresses, range holds {available}")]
    RemapCapacity { needed: usize, available: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid node id {0}")]
    InvalidNode(usize),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("cannot augment: no minority samples")]
    NoMinoritySamples,

    #[error("contrastive sets: {0}")]
    Contrastive(String),

    #[error("numerical abort at epoch {epoch}: {term} is not finite")]
    NonFinite { epoch: usize, term: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
