use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch of {requested} exceeds population of {available}")]
    Sizing { requested: u64, available: u64 },

    #[error("base batch size {b0} too small: nesting depth would be zero (need b0 >= 4)")]
    ScheduleUnderflow { b0: u64 },

    #[error("schedule arithmetic overflowed for base batch size {b0}")]
    ScheduleOverflow { b0: u64 },

    #[error("missing smoothness constant {0}")]
    MissingConstant(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}
