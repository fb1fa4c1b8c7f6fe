//! File formats and storage: the JSON Lines vote log, the official results
//! CSV, the party registry, the append-only [`VoteStore`] and obfuscated
//! exports.

pub mod export;
pub mod log;
pub mod official;
pub mod wire;

use std::fmt;
use std::path::Path;

use pollcast_core::{validate_registry, PartyRegistry, Violation};

pub use export::{export_obfuscated, pseudonym, ExportConfig, Granularity, RegionPolicy};
pub use log::{LogSink, Snapshot, StoreError, VoteStore};
pub use official::{parse_official_results, CsvError};
pub use wire::{parse_vote_log, record_to_line, LineError, LineErrorKind, LogLine, ParsedLog};

#[derive(Debug)]
pub enum RegistryError {
    Io(std::io::Error),
    Json(serde_json::Error),
    Invalid(Vec<Violation>),
}

impl fmt::Display for RegistryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegistryError::Io(e) => write!(f, "cannot read registry: {e}"),
            RegistryError::Json(e) => write!(f, "malformed registry: {e}"),
            RegistryError::Invalid(violations) => {
                write!(f, "invalid registry:")?;
                for v in violations {
                    write!(f, "\n  {}: {}", v.path, v.message)?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for RegistryError {}

/// Parses and validates a registry document.
pub fn registry_from_str(text: &str) -> Result<PartyRegistry, RegistryError> {
    let registry: PartyRegistry = serde_json::from_str(text).map_err(RegistryError::Json)?;
    let violations = validate_registry(&registry);
    if violations.is_empty() {
        Ok(registry)
    } else {
        Err(RegistryError::Invalid(violations))
    }
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<PartyRegistry, RegistryError> {
    let text = std::fs::read_to_string(path).map_err(RegistryError::Io)?;
    registry_from_str(&text)
}
