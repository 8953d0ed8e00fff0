use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid routing matrix: {0}")]
    Routing(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("not enough data: {0}")]
    Insufficient(String),
    #[error("simulation invariant broken at step {step}: {msg}")]
    Invariant { step: u64, msg: String },
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config encode error: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
