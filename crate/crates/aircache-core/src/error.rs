//! Error type shared across the crate.

use core::fmt;

/// Errors surfaced by the compression pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Operand dimensions are incompatible.
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// A softmax row had every column masked out.
    DegenerateMask { row: usize },
    /// Too few samples for the requested statistic.
    InsufficientData { needed: usize, got: usize },
    /// A configuration value is out of its legal range.
    Config(&'static str),
    /// The text segment is empty.
    EmptyText,
    /// The observation window ended up with no tokens.
    EmptyWindow,
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Shape { expected, got } => write!(
                f,
                "shape mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            CoreError::DegenerateMask { row } => {
                write!(f, "softmax row {row} is fully masked")
            }
            CoreError::InsufficientData { needed, got } => {
                write!(f, "need at least {needed} samples, got {got}")
            }
            CoreError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            CoreError::EmptyText => write!(f, "text segment is empty"),
            CoreError::EmptyWindow => write!(f, "observation window is empty"),
        }
    }
}

impl core::error::Error for CoreError {}
