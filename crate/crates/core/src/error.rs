use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("window shorter than frame ({frame} > {len} samples)")]
    WindowShorterThanFrame { frame: usize, len: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("not a container file")]
    NotContainer,
    #[error("unsupported container version: found {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("expected checkpoint stage {expected}, found {found}")]
    Stage { expected: String, found: String },
    #[error("no observed modality")]
    NoObservedModality,
    #[error("unknown modality id {0}")]
    UnknownModality(usize),
    #[error("zero-norm embedding (cosine similarity undefined)")]
    ZeroNorm,
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Config(_) => 3,
            Error::Stage { .. } => 4,
            Error::Numeric(_) => 5,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
