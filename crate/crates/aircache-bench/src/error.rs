use aircache_core::CoreError;

/// Harness-level failures, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("pipeline error: {0}")]
    Core(#[from] CoreError),
}

impl BenchError {
    /// CLI exit code: 2 for config errors, 3 for IO errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Core(CoreError::Config(_)) => 2,
            BenchError::Io(_) => 3,
            BenchError::Core(_) => 1,
        }
    }
}
