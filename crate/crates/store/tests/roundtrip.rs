use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use pollcast_core::fixtures::{sample_official, sample_registry, SAMPLE_OFFICIAL_CSV};
use pollcast_core::{latest_votes, run_forecast, ForecastOptions, Method, PriorVote, VoteRecord};
use pollcast_store::{
    export_obfuscated, parse_official_results, parse_vote_log, pseudonym, ExportConfig, Granularity, RegionPolicy,
    StoreError, VoteStore,
};
use proptest::prelude::*;

const CURRENT: &[&str] = &[
    "LIKUD",
    "ZIONIST_UNION",
    "YESH_ATID",
    "KULANU",
    "JOINT_LIST",
    "SHAS",
    "UTJ",
    "MERETZ",
];
const PRIOR: &[&str] = &["LIKUD_BEYTENU", "AVODA", "YESH_ATID", "HADASH", "SHAS", "UTJ", "MERETZ"];

/// `(device, minutes after start, current index, prior index)`; prior indices
/// past the list mean abstained or undisclosed.
fn build_log(spec: &[(u8, u16, u8, u8)]) -> Vec<VoteRecord> {
    let start = Utc.with_ymd_and_hms(2015, 3, 10, 0, 0, 0).unwrap();
    spec.iter()
        .enumerate()
        .map(|(i, &(device, minutes, current, prior))| {
            let prior = match prior as usize {
                p if p < PRIOR.len() => PriorVote::Party(PRIOR[p].into()),
                p if p == PRIOR.len() => PriorVote::Abstained,
                _ => PriorVote::Unknown,
            };
            VoteRecord {
                device_id: format!("device-{device}").as_str().into(),
                timestamp: start + Duration::minutes(i64::from(minutes)),
                seq: i as u64 + 1,
                current_party: CURRENT[current as usize % CURRENT.len()].into(),
                prior,
                region: Some(format!("r{}", device % 3)),
            }
        })
        .collect()
}

fn deterministic_log(n: usize) -> Vec<VoteRecord> {
    let spec: Vec<_> = (0..n)
        .map(|i| {
            (
                (i * 37 % 61) as u8,
                (i * 613 % 7200) as u16,
                (i * 11 % 8) as u8,
                (i * 5 % 9) as u8,
            )
        })
        .collect();
    build_log(&spec)
}

fn methods() -> Vec<Method> {
    ["raw", "standardized", "fixed:AY+YH+AU+S"]
        .iter()
        .map(|m| m.parse().unwrap())
        .collect()
}

#[test]
fn file_store_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("votes.jsonl");
    let registry = Arc::new(sample_registry());
    let log = deterministic_log(120);
    {
        let store = VoteStore::open(&path, Arc::clone(&registry)).unwrap();
        for record in &log {
            store.append(record.clone()).unwrap();
        }
        store.sync().unwrap();
    }
    let store = VoteStore::open(&path, Arc::clone(&registry)).unwrap();
    assert_eq!(store.snapshot().events(), &log[..]);
    assert_eq!(store.high_water(), 120);

    let mut next = log[0].clone();
    next.seq = 0;
    next.timestamp += Duration::days(30);
    assert_eq!(store.append(next).unwrap(), 121);
}

#[test]
fn torn_tail_is_dropped_on_open() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("votes.jsonl");
    let registry = Arc::new(sample_registry());
    let log = deterministic_log(10);
    {
        let store = VoteStore::open(&path, Arc::clone(&registry)).unwrap();
        for record in &log {
            store.append(record.clone()).unwrap();
        }
    }
    let intact = std::fs::metadata(&path).unwrap().len();
    let mut file = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    file.write_all(br#"{"seq":11,"device_id":"x","party_20"#).unwrap();
    drop(file);

    let store = VoteStore::open(&path, registry).unwrap();
    assert_eq!(store.snapshot().len(), 10);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), intact);
}

#[test]
fn damaged_middle_line_is_reported_with_its_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("votes.jsonl");
    let registry = sample_registry();
    let abstention = registry.abstention_code.clone();
    let lines: Vec<String> = deterministic_log(3)
        .iter()
        .map(|r| pollcast_store::record_to_line(r, &abstention))
        .collect();
    let text = format!("{}\nnot json\n{}\n", lines[0], lines[2]);
    std::fs::write(&path, &text).unwrap();
    match VoteStore::open(&path, Arc::new(registry)) {
        Err(StoreError::Corrupt { offset, .. }) => assert_eq!(offset, lines[0].len() as u64 + 1),
        Err(other) => panic!("expected corruption, got {other}"),
        Ok(_) => panic!("damaged log opened"),
    }
}

#[test]
fn official_csv_matches_bundled_table() {
    let parsed = parse_official_results(SAMPLE_OFFICIAL_CSV.as_bytes()).unwrap();
    assert_eq!(parsed, sample_official());
    let errors = parse_official_results("party,votes,valid\nLIKUD,-3,true\n".as_bytes()).unwrap_err();
    assert_eq!(errors.len(), 1);
}

#[test]
fn salts_give_unlinkable_pseudonyms() {
    let log = deterministic_log(200);
    let devices: BTreeSet<&str> = log.iter().map(|r| r.device_id.as_str()).collect();
    let a: BTreeSet<String> = devices.iter().map(|d| pseudonym(b"first", d)).collect();
    let b: BTreeSet<String> = devices.iter().map(|d| pseudonym(b"second", d)).collect();
    assert_eq!(a.len(), devices.len());
    assert_eq!(b.len(), devices.len());
    assert!(a.is_disjoint(&b));
}

fn assert_export_preserves_forecasts(log: &[VoteRecord], granularity: Granularity) {
    let registry = sample_registry();
    let official = sample_official();
    let options = ForecastOptions::for_registry(&registry).unwrap();
    let config = ExportConfig {
        salt: b"pepper".to_vec(),
        granularity,
        regions: RegionPolicy::Drop,
    };
    let mut out = Vec::new();
    let n = export_obfuscated(log, &registry.abstention_code, &config, &mut out).unwrap();
    assert_eq!(n, log.len());
    let parsed = parse_vote_log(&out[..], &registry);
    assert!(parsed.errors.is_empty(), "{:?}", parsed.errors);

    let before = latest_votes(log);
    let after = latest_votes(&parsed.records);
    assert_eq!(before.len(), after.len());
    for method in methods() {
        let a = run_forecast(&before, &registry, Some(&official), &method, &options);
        let b = run_forecast(&after, &registry, Some(&official), &method, &options);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                assert_eq!(a.votes, b.votes, "{method}");
                assert_eq!(a.seats, b.seats, "{method}");
            }
            (a, b) => assert_eq!(a.err(), b.err(), "{method}"),
        }
    }
}

#[test]
fn export_preserves_forecasts_at_every_granularity() {
    let log = deterministic_log(400);
    for granularity in [Granularity::Hour, Granularity::Day, Granularity::Month] {
        assert_export_preserves_forecasts(&log, granularity);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn export_preserves_forecasts_for_arbitrary_logs(
        spec in prop::collection::vec((0u8..20, 0u16..2000, 0u8..8, 0u8..10), 1..120),
    ) {
        assert_export_preserves_forecasts(&build_log(&spec), Granularity::Month);
    }
}
