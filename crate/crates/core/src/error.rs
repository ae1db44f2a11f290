use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {ctx}: expected {expected:?}, got {got:?}")]
    Shape {
        ctx: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("missing parameter {name} (expected shape {shape:?})")]
    MissingParam { name: String, shape: Vec<usize> },

    #[error("parameter {name}: stored shape {stored:?} does not match expected {expected:?}")]
    ParamShape {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0}")]
    Data(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(ctx: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::Shape {
            ctx: ctx.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
