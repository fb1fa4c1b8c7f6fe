//! Obfuscated export of a vote log.
//!
//! Device identifiers become salted SHA-256 pseudonyms, timestamps are cut to
//! a coarser granularity and regions can be dropped or merged. Records are
//! written in recency order and renumbered `1..=n`, so the per-device order
//! that truncation would otherwise blur survives in `seq`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use chrono::{DateTime, Datelike, Timelike, Utc};
use pollcast_core::{PartyCode, VoteRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::wire::LogLine;

/// Hex digits kept from the digest (128 bits).
pub const PSEUDONYM_HEX_LEN: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Hour,
    #[default]
    Day,
    Month,
}

impl Granularity {
    pub fn truncate(self, ts: &DateTime<Utc>) -> String {
        match self {
            Granularity::Hour => {
                format!(
                    "{:04}-{:02}-{:02}T{:02}:00:00Z",
                    ts.year(),
                    ts.month(),
                    ts.day(),
                    ts.hour()
                )
            }
            Granularity::Day => ts.format("%Y-%m-%d").to_string(),
            Granularity::Month => ts.format("%Y-%m").to_string(),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Hour => "hour",
            Granularity::Day => "day",
            Granularity::Month => "month",
        })
    }
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hour" => Ok(Granularity::Hour),
            "day" => Ok(Granularity::Day),
            "month" => Ok(Granularity::Month),
            other => Err(format!("unknown granularity `{other}` (expected hour, day or month)")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum RegionPolicy {
    #[default]
    Keep,
    Drop,
    /// Maps fine regions to coarse ones; unmapped regions become `other`.
    Coarsen(BTreeMap<String, String>),
}

impl RegionPolicy {
    fn apply(&self, region: Option<&str>) -> Option<String> {
        match self {
            RegionPolicy::Keep => region.map(str::to_owned),
            RegionPolicy::Drop => None,
            RegionPolicy::Coarsen(map) => region.map(|r| map.get(r).cloned().unwrap_or_else(|| "other".to_owned())),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExportConfig {
    pub salt: Vec<u8>,
    pub granularity: Granularity,
    pub regions: RegionPolicy,
}

pub fn pseudonym(salt: &[u8], device_id: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(salt);
    hasher.update([0u8]);
    hasher.update(device_id.as_bytes());
    let mut text = hex::encode(hasher.finalize());
    text.truncate(PSEUDONYM_HEX_LEN);
    text
}

/// Obfuscated lines in recency order.
pub fn obfuscate(events: &[VoteRecord], abstention_code: &PartyCode, config: &ExportConfig) -> Vec<LogLine> {
    let mut ordered: Vec<&VoteRecord> = events.iter().collect();
    ordered.sort_by(|a, b| a.recency_cmp(b));
    ordered
        .into_iter()
        .enumerate()
        .map(|(i, record)| {
            let mut line = LogLine::from_record(record, abstention_code);
            line.seq = Some(i as u64 + 1);
            line.device_id = None;
            line.pseudonym = Some(pseudonym(&config.salt, record.device_id.as_str()));
            line.ts = Some(config.granularity.truncate(&record.timestamp));
            line.region = config.regions.apply(record.region.as_deref());
            line
        })
        .collect()
}

/// Writes the export as JSON Lines; returns the number of records.
pub fn export_obfuscated(
    events: &[VoteRecord],
    abstention_code: &PartyCode,
    config: &ExportConfig,
    mut out: impl Write,
) -> io::Result<usize> {
    let lines = obfuscate(events, abstention_code, config);
    for line in &lines {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(lines.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::parse_vote_log;
    use chrono::TimeZone;
    use pollcast_core::fixtures::sample_registry;
    use pollcast_core::{latest_votes, DeviceId, PriorVote};

    fn at(day: u32, hour: u32, min: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2015, 3, day, hour, min, 0).unwrap()
    }

    fn record(device: &str, ts: DateTime<Utc>, seq: u64, party: &str, region: Option<&str>) -> VoteRecord {
        VoteRecord {
            device_id: DeviceId::new(device),
            timestamp: ts,
            seq,
            current_party: party.into(),
            prior: PriorVote::Party("SHAS".into()),
            region: region.map(str::to_owned),
        }
    }

    #[test]
    fn pseudonyms_are_salted_and_stable() {
        let a = pseudonym(b"salt", "device-1");
        assert_eq!(a.len(), PSEUDONYM_HEX_LEN);
        assert_eq!(a, pseudonym(b"salt", "device-1"));
        assert_ne!(a, pseudonym(b"other", "device-1"));
        assert_ne!(a, pseudonym(b"salt", "device-2"));
        // the separator keeps salt and id from running together
        assert_ne!(pseudonym(b"ab", "c"), pseudonym(b"a", "bc"));
    }

    #[test]
    fn truncation() {
        let ts = Utc.with_ymd_and_hms(2015, 3, 16, 14, 22, 7).unwrap();
        assert_eq!(Granularity::Hour.truncate(&ts), "2015-03-16T14:00:00Z");
        assert_eq!(Granularity::Day.truncate(&ts), "2015-03-16");
        assert_eq!(Granularity::Month.truncate(&ts), "2015-03");
        assert_eq!("month".parse::<Granularity>(), Ok(Granularity::Month));
        assert!("week".parse::<Granularity>().is_err());
    }

    #[test]
    fn no_raw_identifier_or_fine_timestamp_leaks() {
        let registry = sample_registry();
        let events = vec![record("phone-XYZ", at(16, 14, 22), 1, "LIKUD", Some("Haifa"))];
        let mut config = ExportConfig {
            salt: b"s".to_vec(),
            ..Default::default()
        };
        config.regions = RegionPolicy::Coarsen([("Haifa".to_owned(), "North".to_owned())].into());
        let mut out = Vec::new();
        assert_eq!(
            export_obfuscated(&events, &registry.abstention_code, &config, &mut out).unwrap(),
            1
        );
        let text = String::from_utf8(out).unwrap();
        assert!(!text.contains("phone-XYZ"));
        assert!(!text.contains("device_id"));
        assert!(!text.contains("14:22"));
        assert!(text.contains("\"region\":\"North\""));

        config.regions = RegionPolicy::Drop;
        let lines = obfuscate(&events, &registry.abstention_code, &config);
        assert_eq!(lines[0].region, None);
    }

    #[test]
    fn same_day_revotes_keep_their_order() {
        let registry = sample_registry();
        // stored out of time order; the later vote of `a` has the smaller seq
        let events = vec![
            record("a", at(16, 18, 0), 1, "KULANU", None),
            record("a", at(16, 9, 0), 2, "LIKUD", None),
            record("b", at(16, 12, 0), 3, "MERETZ", None),
        ];
        let config = ExportConfig {
            granularity: Granularity::Month,
            ..Default::default()
        };
        let mut out = Vec::new();
        export_obfuscated(&events, &registry.abstention_code, &config, &mut out).unwrap();
        let parsed = parse_vote_log(&out[..], &registry);
        assert!(parsed.errors.is_empty());
        let latest = latest_votes(parsed.records.iter());
        let latest_a = &latest[pseudonym(b"", "a").as_str()];
        assert_eq!(latest_a.current_party.as_str(), "KULANU");
        assert_eq!(parsed.records.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![1, 2, 3]);
    }
}
