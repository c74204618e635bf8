use std::io;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by telemetry acquisition, detection, simulation,
/// network probing, and persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid detector config: {0}")]
    InvalidConfig(String),

    #[error("device {device_id}: reading at {current_s}s does not advance past {previous_s}s")]
    OutOfOrder {
        device_id: String,
        previous_s: f64,
        current_s: f64,
    },

    #[error("failed to acquire {metric}: {reason}")]
    Acquisition { metric: &'static str, reason: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("mitigation protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("{path}:{line}: corrupt record: {reason}")]
    CorruptLog {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("schema mismatch in {path}: expected {expected}, found {found}")]
    SchemaMismatch {
        path: String,
        expected: String,
        found: String,
    },

    #[error("refused: {0}")]
    Refused(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
