use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value at {location}")]
    NonFiniteValue { location: String },

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("invalid tape: {0}")]
    InvalidTape(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("empty request: {0}")]
    EmptyRequest(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("frame window of length {0} is too small to draw a pair")]
    WindowTooSmall(usize),

    #[error("all atlas patches are collapsed")]
    DegenerateAtlas,

    #[error("mesh has zero surface area")]
    DegenerateMesh,

    #[error("{path}: parse error at {at}: {msg}")]
    Parse {
        path: PathBuf,
        at: String,
        msg: String,
    },

    #[error("labeled frames have inconsistent point counts ({expected} vs {found} in frame {frame})")]
    LabelMismatch {
        expected: usize,
        found: usize,
        frame: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted at iteration {iteration}: {source}")]
    TrainingAborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, at: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            at: at.into(),
            msg: msg.into(),
        }
    }

    /// Process exit status: 2 for configuration, 4 for numerical failures,
    /// 3 for everything concerning input data and files.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            return 4;
        }
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::TrainingAborted { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    /// True for failures caused by numerics rather than inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFiniteValue { .. } | Error::NonFiniteGradient { .. } | Error::InvalidTape(_) => true,
            Error::TrainingAborted { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
