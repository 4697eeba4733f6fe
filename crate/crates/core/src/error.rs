use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid block choice: {0}")]
    InvalidChoice(String),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("illegal accelerator config: {0}")]
    IllegalConfig(String),
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("categorical slot has no options")]
    EmptyOptions,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("oracle cap exceeded: {macs} MACs > cap {cap}")]
    CapExceeded { macs: u64, cap: u64 },
    #[error("oracle capacity assertion failed: {0}")]
    OracleCapacity(String),
    #[error("non-finite loss ({0})")]
    NonFiniteLoss(String),
    #[error("no legal accelerator config found in {samples} samples")]
    NoLegalConfig { samples: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
