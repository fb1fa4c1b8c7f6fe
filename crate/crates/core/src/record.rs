use std::borrow::Borrow;
use std::cmp::Ordering;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::PartyCode;

/// Opaque, client-chosen respondent identity.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(String);

impl DeviceId {
    pub fn new(id: impl Into<String>) -> Self {
        DeviceId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for DeviceId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DeviceId {
    fn from(id: &str) -> Self {
        DeviceId(id.to_owned())
    }
}

/// What a respondent said about the prior election.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub enum PriorVote {
    #[default]
    Unknown,
    Abstained,
    Party(PartyCode),
}

impl PriorVote {
    pub fn is_known(&self) -> bool {
        !matches!(self, PriorVote::Unknown)
    }

    pub fn party(&self) -> Option<&PartyCode> {
        match self {
            PriorVote::Party(p) => Some(p),
            _ => None,
        }
    }
}

/// One vote event: a device's current choice, optionally with its prior
/// vote and region. `seq` is the storage order and breaks timestamp ties.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoteRecord {
    pub device_id: DeviceId,
    pub timestamp: DateTime<Utc>,
    pub seq: u64,
    pub current_party: PartyCode,
    pub prior: PriorVote,
    pub region: Option<String>,
}

impl VoteRecord {
    /// Order in which events of one device supersede each other.
    pub fn recency_cmp(&self, other: &VoteRecord) -> Ordering {
        self.timestamp.cmp(&other.timestamp).then(self.seq.cmp(&other.seq))
    }
}
