use std::path::PathBuf;

/// Errors produced by the engine, sampler and file readers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),

    #[error("catalog locations are pending (coarse-only data); use the cut-posterior fit")]
    LocationsPending,

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("region {region}: {reason}")]
    Region { region: String, reason: String },

    #[error("event {index}: {source}")]
    AtEvent {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("event {index} lies outside every region")]
    OutsideRegions { index: usize },

    #[error("region table is empty")]
    EmptyRegionTable,

    #[error("latitude {0} is out of range (|lat| must be < 90)")]
    PolarLatitude(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation rejected: {0}")]
    Simulation(String),

    #[error("oracle guard: N = {n} exceeds the naive-evaluation limit of {limit}")]
    OracleGuard { n: usize, limit: usize },

    #[error("diagnostics: {0}")]
    Diagnostics(String),

    #[error("{path}: row {row}: {reason}")]
    Row {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_event(index: usize, source: Error) -> Self {
        Error::AtEvent {
            index,
            source: Box::new(source),
        }
    }
}
