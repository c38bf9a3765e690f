use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed line {line} in {path}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("unknown raw label {raw:?} for scheme {scheme}")]
    UnknownLabel { raw: String, scheme: String },
    #[error("train fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("duplicate reasoning entry ({news_id}, {kind})")]
    DuplicateEntry { news_id: String, kind: String },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("response parse failure: {0}")]
    Parse(String),
    #[error("credibility score {0} outside [0, 100]")]
    ScoreRange(i64),
    #[error("mock backend script exhausted")]
    ScriptExhausted,
    #[error("backend transport failure after {attempts} attempts: {reason}")]
    Transport { attempts: usize, reason: String },
    #[error("parse retry budget exhausted after {0} attempts")]
    ParseBudgetExhausted(usize),
    #[error("gateway failure for item {news_id}: {source}")]
    Gateway {
        news_id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("encoder: {0}")]
    Encoder(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training: {0}")]
    Training(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
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
