//! JSON Lines vote log.
//!
//! One object per line:
//!
//! ```text
//! {"device_id":"a1","ts":"2015-03-16T14:22:07Z","party_2015":"LIKUD","party_2013":"LIKUD_BEYTENU","region":"TA"}
//! ```
//!
//! `party_2013` and `region` may be null or absent; `party_2013` equal to the
//! registry's abstention code records an abstention. Stored and exported
//! logs add `seq`; exports carry `pseudonym` instead of `device_id` and may
//! truncate `ts` to `YYYY-MM-DD` or `YYYY-MM`.

use std::fmt;
use std::io::BufRead;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use pollcast_core::{DeviceId, PartyCode, PartyRegistry, PriorVote, Resolved, VoteRecord};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudonym: Option<String>,
    #[serde(default)]
    pub ts: Option<String>,
    #[serde(default)]
    pub party_2015: Option<String>,
    #[serde(default)]
    pub party_2013: Option<String>,
    #[serde(default)]
    pub region: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LineErrorKind {
    Json(String),
    MissingDeviceId,
    MissingField(&'static str),
    BadTimestamp(String),
    UnknownParty { field: &'static str, code: String },
}

/// A rejected input line, 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineError {
    pub line: u64,
    pub kind: LineErrorKind,
}

impl fmt::Display for LineErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineErrorKind::Json(msg) => write!(f, "malformed record: {msg}"),
            LineErrorKind::MissingDeviceId => f.write_str("missing device id"),
            LineErrorKind::MissingField(field) => write!(f, "missing field `{field}`"),
            LineErrorKind::BadTimestamp(ts) => write!(f, "bad timestamp `{ts}`"),
            LineErrorKind::UnknownParty { field, code } => write!(f, "unknown party code `{code}` in `{field}`"),
        }
    }
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.kind)
    }
}

impl std::error::Error for LineError {}

/// Accepts RFC 3339 instants and the truncated `YYYY-MM-DD` / `YYYY-MM`
/// forms written by exports (read as the first instant of the period).
pub fn parse_timestamp(text: &str) -> Option<DateTime<Utc>> {
    if let Ok(ts) = DateTime::parse_from_rfc3339(text) {
        return Some(ts.with_timezone(&Utc));
    }
    let date = match text.len() {
        10 => NaiveDate::parse_from_str(text, "%Y-%m-%d").ok()?,
        7 => NaiveDate::parse_from_str(&format!("{text}-01"), "%Y-%m-%d").ok()?,
        _ => return None,
    };
    Some(date.and_hms_opt(0, 0, 0)?.and_utc())
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

impl LogLine {
    pub fn from_record(record: &VoteRecord, abstention_code: &PartyCode) -> Self {
        LogLine {
            seq: Some(record.seq),
            device_id: Some(record.device_id.to_string()),
            pseudonym: None,
            ts: Some(format_timestamp(&record.timestamp)),
            party_2015: Some(record.current_party.to_string()),
            party_2013: match &record.prior {
                PriorVote::Unknown => None,
                PriorVote::Abstained => Some(abstention_code.to_string()),
                PriorVote::Party(p) => Some(p.to_string()),
            },
            region: record.region.clone(),
        }
    }

    /// Validates against the registry. Without an explicit `seq` the record
    /// takes `default_seq`.
    pub fn into_record(self, registry: &PartyRegistry, default_seq: u64) -> Result<VoteRecord, LineErrorKind> {
        let device = self
            .device_id
            .or(self.pseudonym)
            .filter(|d| !d.trim().is_empty())
            .ok_or(LineErrorKind::MissingDeviceId)?;
        let ts_text = self.ts.ok_or(LineErrorKind::MissingField("ts"))?;
        let timestamp = parse_timestamp(&ts_text).ok_or(LineErrorKind::BadTimestamp(ts_text))?;

        let current = self.party_2015.ok_or(LineErrorKind::MissingField("party_2015"))?;
        let current_election = registry.current_election_id().unwrap_or_default();
        let current_party = match registry.resolve(current_election, &current) {
            Ok(Resolved::Party(p)) => p.code.clone(),
            _ => {
                return Err(LineErrorKind::UnknownParty {
                    field: "party_2015",
                    code: current,
                })
            }
        };

        let prior = match self.party_2013 {
            None => PriorVote::Unknown,
            Some(code) => {
                let prior_election = registry.prior_election_id().unwrap_or_default();
                match registry.resolve(prior_election, &code) {
                    Ok(Resolved::Party(p)) => PriorVote::Party(p.code.clone()),
                    Ok(Resolved::Abstained) => PriorVote::Abstained,
                    Err(_) => {
                        return Err(LineErrorKind::UnknownParty {
                            field: "party_2013",
                            code,
                        })
                    }
                }
            }
        };

        Ok(VoteRecord {
            device_id: DeviceId::new(device),
            timestamp,
            seq: self.seq.unwrap_or(default_seq),
            current_party,
            prior,
            region: self.region,
        })
    }
}

/// One line of JSON, no trailing newline.
pub fn record_to_line(record: &VoteRecord, abstention_code: &PartyCode) -> String {
    serde_json::to_string(&LogLine::from_record(record, abstention_code)).expect("log lines serialize")
}

pub fn parse_line(text: &str, registry: &PartyRegistry, line: u64) -> Result<VoteRecord, LineError> {
    serde_json::from_str::<LogLine>(text)
        .map_err(|e| LineErrorKind::Json(e.to_string()))
        .and_then(|l| l.into_record(registry, line))
        .map_err(|kind| LineError { line, kind })
}

#[derive(Debug, Default)]
pub struct ParsedLog {
    pub records: Vec<VoteRecord>,
    pub errors: Vec<LineError>,
}

/// Parses every line; bad lines are reported and skipped, blank lines ignored.
/// Records without `seq` are numbered by line.
pub fn parse_vote_log(input: impl BufRead, registry: &PartyRegistry) -> ParsedLog {
    let mut out = ParsedLog::default();
    for (i, line) in input.lines().enumerate() {
        let number = i as u64 + 1;
        let text = match line {
            Ok(text) => text,
            Err(e) => {
                out.errors.push(LineError {
                    line: number,
                    kind: LineErrorKind::Json(e.to_string()),
                });
                continue;
            }
        };
        if text.trim().is_empty() {
            continue;
        }
        match parse_line(&text, registry, number) {
            Ok(record) => out.records.push(record),
            Err(e) => out.errors.push(e),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use pollcast_core::fixtures::sample_registry;
    use proptest::prelude::*;

    const GOOD: &str = r#"{"device_id":"a1","ts":"2015-03-16T14:22:07Z","party_2015":"LIKUD","party_2013":"LIKUD_BEYTENU","region":"TA"}"#;

    #[test]
    fn empty_input() {
        let parsed = parse_vote_log(&b""[..], &sample_registry());
        assert!(parsed.records.is_empty());
        assert!(parsed.errors.is_empty());
    }

    #[test]
    fn one_good_line() {
        let parsed = parse_vote_log(GOOD.as_bytes(), &sample_registry());
        assert!(parsed.errors.is_empty());
        let r = &parsed.records[0];
        assert_eq!(r.device_id.as_str(), "a1");
        assert_eq!(r.timestamp, Utc.with_ymd_and_hms(2015, 3, 16, 14, 22, 7).unwrap());
        assert_eq!(r.seq, 1);
        assert_eq!(r.prior, PriorVote::Party("LIKUD_BEYTENU".into()));
        assert_eq!(r.region.as_deref(), Some("TA"));
    }

    #[test]
    fn prior_vote_forms() {
        let registry = sample_registry();
        let line = |prior: &str| {
            format!(r#"{{"device_id":"x","ts":"2015-02-20T10:00:00Z","party_2015":"SHAS","party_2013":{prior}}}"#)
        };
        assert_eq!(
            parse_line(&line("null"), &registry, 1).unwrap().prior,
            PriorVote::Unknown
        );
        assert_eq!(
            parse_line(&line(r#""ABSTAINED""#), &registry, 1).unwrap().prior,
            PriorVote::Abstained
        );
        // a current-election code is not a prior party
        assert_eq!(
            parse_line(&line(r#""KULANU""#), &registry, 4).unwrap_err(),
            LineError {
                line: 4,
                kind: LineErrorKind::UnknownParty {
                    field: "party_2013",
                    code: "KULANU".into()
                }
            }
        );
    }

    #[test]
    fn error_kinds_are_positioned() {
        let registry = sample_registry();
        let input = [
            GOOD,
            r#"{"ts":"2015-03-16T14:22:07Z","party_2015":"LIKUD"}"#,
            r#"{"device_id":"b","ts":"yesterday","party_2015":"LIKUD"}"#,
            r#"{"device_id":"c","ts":"2015-03-16T14:22:07Z","party_2015":"NO_SUCH"}"#,
            r#"{"device_id":"d","ts":"2015-03-16T14:22:07Z","party_2015":"ABSTAINED"}"#,
            "",
            "{not json",
            r#"{"device_id":"e","ts":"2015-03-16"}"#,
        ]
        .join("\n");
        let parsed = parse_vote_log(input.as_bytes(), &registry);
        assert_eq!(parsed.records.len(), 1);
        let got: Vec<(u64, &LineErrorKind)> = parsed.errors.iter().map(|e| (e.line, &e.kind)).collect();
        assert_eq!(got[0], (2, &LineErrorKind::MissingDeviceId));
        assert_eq!(got[1], (3, &LineErrorKind::BadTimestamp("yesterday".into())));
        assert!(matches!(
            got[2],
            (
                4,
                LineErrorKind::UnknownParty {
                    field: "party_2015",
                    ..
                }
            )
        ));
        assert!(matches!(
            got[3],
            (
                5,
                LineErrorKind::UnknownParty {
                    field: "party_2015",
                    ..
                }
            )
        ));
        assert!(matches!(got[4], (7, LineErrorKind::Json(_))));
        assert_eq!(got[5], (8, &LineErrorKind::MissingField("party_2015")));
        assert_eq!(parsed.errors[1].to_string(), "line 3: bad timestamp `yesterday`");
    }

    #[test]
    fn truncated_timestamps_parse() {
        assert_eq!(
            parse_timestamp("2015-03-16"),
            Some(Utc.with_ymd_and_hms(2015, 3, 16, 0, 0, 0).unwrap())
        );
        assert_eq!(
            parse_timestamp("2015-03"),
            Some(Utc.with_ymd_and_hms(2015, 3, 1, 0, 0, 0).unwrap())
        );
        assert_eq!(
            parse_timestamp("2015-03-16T16:22:07+02:00"),
            Some(Utc.with_ymd_and_hms(2015, 3, 16, 14, 22, 7).unwrap())
        );
        assert_eq!(parse_timestamp("2015-13-01"), None);
        assert_eq!(parse_timestamp("16/03/2015"), None);
    }

    /// Corrupts a known-good line in one of several ways.
    fn corrupt(line: &str, how: u8) -> String {
        match how % 5 {
            0 => line[..line.len() / 2].to_owned(),
            1 => line.replace("\"ts\":\"", "\"ts\":\"x"),
            2 => line.replace("\"party_2015\":\"", "\"party_2015\":\"ZZ"),
            3 => line.replace("\"device_id\":\"", "\"device_id\":\" \",\"_\":\""),
            _ => line.replace('{', "["),
        }
    }

    fn records() -> impl Strategy<Value = Vec<VoteRecord>> {
        let registry = sample_registry();
        let current = registry.current_codes();
        let prior = registry.prior_codes();
        let record = (
            "[a-z0-9]{1,12}",
            0i64..400_000_000,
            0u32..1_000_000_000,
            0..current.len(),
            0..prior.len() + 2,
            prop::option::of("[A-Z]{1,3}"),
        )
            .prop_map(move |(device, secs, nanos, c, p, region)| VoteRecord {
                device_id: DeviceId::new(device),
                timestamp: Utc.timestamp_opt(1_200_000_000 + secs, nanos).unwrap(),
                seq: 0,
                current_party: current[c].clone(),
                prior: match p {
                    0 => PriorVote::Unknown,
                    1 => PriorVote::Abstained,
                    p => PriorVote::Party(prior[p - 2].clone()),
                },
                region,
            });
        prop::collection::vec(record, 0..40).prop_map(|mut rs| {
            for (i, r) in rs.iter_mut().enumerate() {
                r.seq = 10 * i as u64 + 3;
            }
            rs
        })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(rs in records()) {
            let registry = sample_registry();
            let text: String = rs.iter().map(|r| record_to_line(r, &registry.abstention_code) + "\n").collect();
            let parsed = parse_vote_log(text.as_bytes(), &registry);
            prop_assert!(parsed.errors.is_empty());
            prop_assert_eq!(parsed.records, rs);
        }

        #[test]
        fn corrupted_lines_are_counted(rs in records(), picks in prop::collection::vec(any::<(bool, u8)>(), 40)) {
            let registry = sample_registry();
            let mut expected_bad = Vec::new();
            let lines: Vec<String> = rs
                .iter()
                .zip(&picks)
                .enumerate()
                .map(|(i, (r, (bad, how)))| {
                    let line = record_to_line(r, &registry.abstention_code);
                    if *bad {
                        expected_bad.push(i as u64 + 1);
                        corrupt(&line, *how)
                    } else {
                        line
                    }
                })
                .collect();
            let parsed = parse_vote_log(lines.join("\n").as_bytes(), &registry);
            prop_assert_eq!(parsed.records.len(), rs.len() - expected_bad.len());
            prop_assert_eq!(parsed.errors.iter().map(|e| e.line).collect::<Vec<_>>(), expected_bad);
        }
    }
}
