use std::path::PathBuf;

use crate::grid::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation in {path}: {source}")]
    Schema {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{} validation violation(s); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Invalid(Vec<Violation>),

    #[error("injections do not balance: net {net_mw} MW")]
    UnbalancedInjections { net_mw: f64 },

    #[error("susceptance matrix is singular (network disconnected?)")]
    SingularNetwork,

    #[error("unknown bus {0}")]
    UnknownBus(usize),

    #[error("node {node} is not part of the feeder of DSO {dso}")]
    UnknownNode { dso: u32, node: u32 },

    #[error("reduction of {reduction} MW at node {node} exceeds its base load of {load} MW")]
    ReductionExceedsLoad { node: u32, reduction: f64, load: f64 },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("hour {0} is outside 0..24")]
    HourOutOfRange(usize),

    #[error("central clearing is {0}")]
    ClearingFailed(&'static str),

    #[error("hour {hour}: {source}")]
    AtHour {
        hour: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Violations carried by a validation failure, if any.
    pub fn violations(&self) -> &[Violation] {
        match self {
            Error::Invalid(v) => v,
            Error::AtHour { source, .. } => source.violations(),
            _ => &[],
        }
    }
}
