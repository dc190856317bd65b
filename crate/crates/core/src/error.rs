use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("vector norm {0:e} is too small to normalize")]
    ZeroNorm(f64),
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("invalid image buffer: {0}")]
    InvalidImage(String),
    #[error("box [{x}, {y}, {w}, {h}] does not fit a {width}x{height} image")]
    InvalidBox {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
    #[error("backend returned an invalid detection: {0}")]
    InvalidDetection(String),
    #[error("invalid category name {0:?}")]
    InvalidCategory(String),
    #[error("invalid prompt set: {0}")]
    InvalidPromptSet(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("completion for {category} ({polarity}) yielded no usable prompt after {attempts} attempts")]
    MalformedCompletion {
        category: String,
        polarity: String,
        attempts: usize,
    },
    #[error("anomaly score denominator is degenerate (sim_anomaly={sim_anomaly}, sim_normal={sim_normal})")]
    DegenerateDenominator { sim_anomaly: f64, sim_normal: f64 },
    #[error("metric needs both classes present{}", scope.as_ref().map(|c| format!(" (category {c})")).unwrap_or_default())]
    SingleClass { scope: Option<String> },
    #[error("record references unknown sample {0:?}")]
    MissingSample(String),
    #[error("no evaluation samples found under {0}")]
    EmptyDataset(PathBuf),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("could not decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("{failed} of {total} samples failed, above the allowed fraction {allowed}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        allowed: f64,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
