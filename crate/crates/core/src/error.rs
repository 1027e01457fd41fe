use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("pose decomposition failed: {0}")]
    Decomposition(String),

    #[error("gimbal lock: |yaw| = {yaw:.9} rad is within 1e-6 of pi/2")]
    GimbalLock { yaw: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error at byte {offset}{}: {message}", record.map(|r| format!(" (record {r})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        offset: u64,
        record: Option<usize>,
        message: String,
    },

    #[error("config hash mismatch: {what} expects {expected} but found {found}")]
    HashMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("degenerate landmark bounding box ({width} x {height})")]
    DegenerateBBox { width: f64, height: f64 },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
