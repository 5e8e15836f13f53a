use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A malformed line in a trace or metric file. `line` is 1-based.
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),

    /// Two simultaneously live `mmap` ranges overlap.
    #[error(
        "allocation event #{second_event} (t={second_time}, [{second_base:#x}, {second_end:#x})) overlaps \
         live allocation from event #{first_event} (t={first_time}, [{first_base:#x}, {first_end:#x}))"
    )]
    OverlappingAllocation {
        first_event: usize,
        first_time: u64,
        first_base: u64,
        first_end: u64,
        second_event: usize,
        second_time: u64,
        second_base: u64,
        second_end: u64,
    },

    #[error(
        "{stream} is not sorted by timestamp: event #{index} at t={timestamp} follows t={previous}"
    )]
    Unsorted {
        stream: &'static str,
        index: usize,
        timestamp: u64,
        previous: u64,
    },

    #[error("object {object_id} has external samples but no assignment in the placement plan")]
    PlanMismatch { object_id: u32 },

    #[error("exhaustive placement refused: {count} objects exceeds the limit of {max}")]
    TooManyObjects { count: usize, max: usize },

    #[error("memory exhausted: page {page:#x} cannot be committed at t={timestamp} (DRAM and NVM are full)")]
    CapacityExhausted { page: u64, timestamp: u64 },

    #[error("schema mismatch: missing columns {missing:?}")]
    Schema { missing: Vec<String> },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coarse classification used to pick process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input: trace, config, spec or plan files.
    Input,
    /// A broken internal invariant.
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Invariant(_) => ErrorClass::Internal,
            _ => ErrorClass::Input,
        }
    }

    pub(crate) fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_owned(),
            line,
            message: message.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            source_name: "csv".into(),
            line,
            message: e.to_string(),
        }
    }
}
