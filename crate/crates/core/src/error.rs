use thiserror::Error;

/// Errors raised while reading or validating scene data.
#[derive(Debug, Error)]
pub enum SceneError {
    #[error("PLY parse error in {element}: {message}")]
    Parse { element: String, message: String },
    #[error("gaussian {index} is invalid: {message}")]
    Validation { index: usize, message: String },
    #[error("unknown object id `{0}`")]
    UnknownObject(String),
    #[error("object `{object}` references gaussian {index}, but the scene holds {len}")]
    DanglingIndex {
        object: String,
        index: usize,
        len: usize,
    },
    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("degenerate correspondences: {0}")]
    RankDeficient(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum EditError {
    #[error("invalid edit parameter: {0}")]
    Parameter(String),
    #[error("selection is empty")]
    EmptySelection,
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("malformed {kind} header: {message}")]
    Header { kind: &'static str, message: String },
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    Size { expected: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite state or control: {0}")]
    NonFinite(&'static str),
    #[error("timestep {dt} outside (0, {max}]")]
    Timestep { dt: f64, max: f64 },
    #[error("state/control platform mismatch")]
    PlatformMismatch,
}

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("invalid gate {index}: {message}")]
    Gate { index: usize, message: String },
    #[error("invalid track: {0}")]
    Track(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("setup error: {0}")]
    Setup(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Track(#[from] TrackError),
}

#[derive(Debug, Error)]
pub enum PgrError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("loss {index} is invalid ({value})")]
    InvalidLoss { index: usize, value: f64 },
    #[error("sampling failed: every drawn grid cell was infeasible")]
    SamplingFailure,
    #[error(transparent)]
    Sim(#[from] SimError),
}
