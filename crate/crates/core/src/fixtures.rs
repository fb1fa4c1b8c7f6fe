//! Bundled sample data: a two-election registry with the four fixed groups
//! and an official-results table for the prior election. Used by tests and
//! demos across the workspace.

use crate::bias::{OfficialResults, OfficialRow};
use crate::model::PartyRegistry;

pub const SAMPLE_REGISTRY_JSON: &str = include_str!("../fixtures/registry.json");
pub const SAMPLE_OFFICIAL_CSV: &str = include_str!("../fixtures/official_2013.csv");

pub fn sample_registry() -> PartyRegistry {
    serde_json::from_str(SAMPLE_REGISTRY_JSON).expect("bundled registry parses")
}

pub fn sample_official() -> OfficialResults {
    let rows = SAMPLE_OFFICIAL_CSV
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut fields = line.split(',');
            let mut next = || fields.next().expect("three columns").trim();
            OfficialRow {
                party: next().into(),
                votes: next().parse().expect("integer votes"),
                valid: next() == "true",
            }
        })
        .collect();
    OfficialResults { rows }
}
