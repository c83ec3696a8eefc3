use thiserror::Error;

use crate::schema::Side;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no features for side {0}")]
    NoFeaturesForSide(Side),

    #[error("not a click")]
    NotAClick,

    #[error("invalid down-sampling factor {0} (must be > 1)")]
    InvalidDownsampling(f64),

    #[error("no events to evaluate")]
    NoEvents,

    #[error("no clicks to analyse")]
    NoClicks,

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid event {event_id}: {reason}")]
    Event { event_id: u64, reason: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("reports cover different event sets: {0}")]
    ReportMismatch(String),

    #[error("baseline logloss is zero")]
    ZeroBaseline,

    #[error("infeasible world: {0}")]
    InfeasibleWorld(String),

    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
