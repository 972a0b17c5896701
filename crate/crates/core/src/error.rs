use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json at {path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("recording {recording}: required stream {stream} is missing")]
    MissingStream { recording: String, stream: String },

    #[error("recording {recording}: {reason}")]
    BadRecording { recording: String, reason: String },

    #[error("NED origin too far from Earth's surface: |origin| = {norm:.0} m")]
    DegenerateOrigin { norm: f64 },

    #[error("prediction step dt = {0} s outside (0, 0.25]")]
    InvalidDt(f64),

    #[error("GNSS fix marked invalid cannot be applied")]
    InvalidFix,

    #[error("no valid GNSS fix in recording")]
    NoGnss,

    #[error("need at least {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("expected {expected} frames, got {got}")]
    WrongLength { expected: usize, got: usize },

    #[error("requested {wanted} scenes but only {available} eligible non-overlapping scenes exist")]
    NotEnoughScenes { wanted: usize, available: usize },

    #[error("trajectory is incomplete; curvature needs all 60 points")]
    IncompleteTrajectory,

    #[error("expected {expected} caption windows, got {got}")]
    WindowMismatch { expected: usize, got: usize },

    #[error("frame streams out of step: {0}")]
    FrameMismatch(String),

    #[error("no camera model available for overlay")]
    MissingCamera,

    #[error("{path}:{line}: schema violation: {reason}")]
    Schema { path: PathBuf, line: usize, reason: String },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("vlm request failed after {attempts} attempts: {reason}")]
    Vlm { attempts: u32, reason: String },

    #[error("vlm response malformed: {0}")]
    VlmResponse(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
