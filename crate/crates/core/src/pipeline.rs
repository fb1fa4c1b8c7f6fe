//! End-to-end forecast for one method: raw counts, or standardized through
//! the transition matrix, optionally with fixed groups pinned, then
//! threshold and apportionment. The CLI and the service both call
//! [`run_forecast`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apportionment::{allocate_seats, ApportionError, SeatAllocation, VoteVector};
use crate::bias::{
    apply_group_fixes, build_counts, build_results_vector, forecast, normalize, raw_forecast, respondent_weights,
    EngineError, LatestVotes, OfficialResults, DEFAULT_SMALL_CLASS_FLOOR,
};
use crate::model::{PartyCode, PartyRegistry, ThresholdFraction};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "method", content = "groups", rename_all = "lowercase")]
pub enum Method {
    Raw,
    Standardized,
    Fixed(Vec<String>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MethodParseError {
    #[error("unknown method `{0}` (expected raw, standardized or fixed)")]
    UnknownMethod(String),
    #[error("method `fixed` needs at least one group")]
    NoGroups,
}

impl Method {
    /// Builds a method from a name and an optional group list separated by
    /// commas, `+` or whitespace (a `+` in a URL query decodes to a space).
    pub fn from_parts(name: &str, groups: Option<&str>) -> Result<Self, MethodParseError> {
        match name {
            "raw" => Ok(Method::Raw),
            "standardized" => Ok(Method::Standardized),
            "fixed" => {
                let groups: Vec<String> = groups
                    .unwrap_or("")
                    .split(|c: char| c == ',' || c == '+' || c.is_whitespace())
                    .map(str::trim)
                    .filter(|g| !g.is_empty())
                    .map(String::from)
                    .collect();
                if groups.is_empty() {
                    Err(MethodParseError::NoGroups)
                } else {
                    Ok(Method::Fixed(groups))
                }
            }
            other => Err(MethodParseError::UnknownMethod(other.into())),
        }
    }

    pub fn uses_prior_votes(&self) -> bool {
        !matches!(self, Method::Raw)
    }
}

/// `raw`, `standardized`, `fixed:AY+YH`.
impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Raw => f.write_str("raw"),
            Method::Standardized => f.write_str("standardized"),
            Method::Fixed(groups) => write!(f, "fixed:{}", groups.join("+")),
        }
    }
}

impl FromStr for Method {
    type Err = MethodParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((name, groups)) => Method::from_parts(name, Some(groups)),
            None => Method::from_parts(s, None),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastOptions {
    pub house_size: u32,
    pub threshold: ThresholdFraction,
    pub small_class_floor: u64,
}

impl ForecastOptions {
    /// House size and threshold of the registry's current election.
    pub fn for_registry(registry: &PartyRegistry) -> Option<Self> {
        registry.current().map(|e| ForecastOptions {
            house_size: e.house_size,
            threshold: e.threshold_fraction.clone(),
            small_class_floor: DEFAULT_SMALL_CLASS_FLOOR,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSizes {
    /// Devices with at least one vote.
    pub devices: usize,
    /// Devices that disclosed a prior vote, abstention included.
    pub with_prior: usize,
    /// Devices that contribute to this method's forecast.
    pub used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastOutcome {
    #[serde(flatten)]
    pub method: Method,
    pub votes: VoteVector,
    pub shares: BTreeMap<PartyCode, f64>,
    pub seats: SeatAllocation,
    pub sample: SampleSizes,
    /// Prior parties whose weight rests on fewer respondents than the floor.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub small_classes: Vec<PartyCode>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("insufficient prior data: no usable prior-vote disclosures")]
    InsufficientPriorData,
    #[error("official prior results are required for method {0}")]
    MissingOfficialResults(Method),
    #[error("unknown fixed group `{0}`")]
    UnknownGroup(String),
    #[error(transparent)]
    Apportion(#[from] ApportionError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub fn run_forecast(
    latest: &LatestVotes,
    registry: &PartyRegistry,
    official: Option<&OfficialResults>,
    method: &Method,
    options: &ForecastOptions,
) -> Result<ForecastOutcome, ForecastError> {
    let parties = registry.current_codes();
    let with_prior = latest.values().filter(|r| r.prior.is_known()).count();

    let groups = match method {
        Method::Fixed(ids) => ids
            .iter()
            .map(|id| {
                registry
                    .group(id)
                    .ok_or_else(|| ForecastError::UnknownGroup(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?,
        _ => Vec::new(),
    };

    let (votes, used, small_classes) = if method.uses_prior_votes() {
        let official = official.ok_or_else(|| ForecastError::MissingOfficialResults(method.clone()))?;
        let counts = build_counts(latest, registry);
        if counts.total() == 0 {
            return Err(ForecastError::InsufficientPriorData);
        }
        let matrix = normalize(&counts);
        let results = match build_results_vector(official, &matrix) {
            Ok(v) => v,
            Err(EngineError::NoOverlap) => return Err(ForecastError::InsufficientPriorData),
            Err(e) => return Err(e.into()),
        };
        let standardized = forecast(&matrix, &results)?;
        let weights = respondent_weights(&counts, &results, options.small_class_floor);
        let used = weights.classes.values().map(|c| c.respondents as usize).sum();
        let small = weights.small_classes().cloned().collect();
        let votes = if groups.is_empty() {
            standardized
        } else {
            apply_group_fixes(&standardized, &groups, official)?
        };
        (votes, used, small)
    } else {
        (raw_forecast(latest, &parties), latest.len(), Vec::new())
    };

    let seats = allocate_seats(&votes, options.house_size, &options.threshold)?;
    let total = votes.total();
    let shares = votes.iter().map(|(p, v)| (p.clone(), v / total)).collect();

    Ok(ForecastOutcome {
        method: method.clone(),
        votes,
        shares,
        seats,
        sample: SampleSizes {
            devices: latest.len(),
            with_prior,
            used,
        },
        small_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::latest_votes;
    use crate::fixtures::{sample_official, sample_registry};
    use crate::record::{PriorVote, VoteRecord};
    use chrono::{TimeZone, Utc};

    fn record(device: &str, seq: u64, current: &str, prior: PriorVote) -> VoteRecord {
        VoteRecord {
            device_id: device.into(),
            timestamp: Utc.timestamp_opt(1_426_000_000 + seq as i64, 0).unwrap(),
            seq,
            current_party: current.into(),
            prior,
            region: None,
        }
    }

    #[test]
    fn method_strings_round_trip() {
        for text in ["raw", "standardized", "fixed:AY", "fixed:AY+YH+AU+S"] {
            let method: Method = text.parse().unwrap();
            assert_eq!(method.to_string(), text);
        }
        assert_eq!(
            Method::from_parts("fixed", Some("AY, YH")),
            Ok(Method::Fixed(vec!["AY".into(), "YH".into()]))
        );
        assert_eq!(
            "fixed:AY YH".parse::<Method>(),
            Ok(Method::Fixed(vec!["AY".into(), "YH".into()]))
        );
        assert_eq!("fixed".parse::<Method>(), Err(MethodParseError::NoGroups));
        assert!(matches!(
            "pooled".parse::<Method>(),
            Err(MethodParseError::UnknownMethod(_))
        ));
        let json = serde_json::to_string(&Method::Fixed(vec!["AY".into()])).unwrap();
        assert_eq!(json, r#"{"method":"fixed","groups":["AY"]}"#);
        assert_eq!(serde_json::to_string(&Method::Raw).unwrap(), r#"{"method":"raw"}"#);
    }

    #[test]
    fn raw_three_votes() {
        let registry = sample_registry();
        let log = [
            record("a", 1, "LIKUD", PriorVote::Unknown),
            record("b", 2, "LIKUD", PriorVote::Unknown),
            record("c", 3, "MERETZ", PriorVote::Unknown),
        ];
        let options = ForecastOptions::for_registry(&registry).unwrap();
        let out = run_forecast(&latest_votes(&log), &registry, None, &Method::Raw, &options).unwrap();
        assert_eq!(out.seats.total(), 120);
        assert_eq!(out.seats.get("LIKUD"), 80);
        assert_eq!(out.seats.get("MERETZ"), 40);
        assert_eq!(
            out.sample,
            SampleSizes {
                devices: 3,
                with_prior: 0,
                used: 3
            }
        );
        assert!((out.shares.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn standardized_without_disclosures_is_insufficient() {
        let registry = sample_registry();
        let log = [
            record("a", 1, "LIKUD", PriorVote::Unknown),
            record("b", 2, "SHAS", PriorVote::Abstained),
        ];
        let options = ForecastOptions::for_registry(&registry).unwrap();
        let official = sample_official();
        for method in [Method::Standardized, Method::Fixed(vec!["AY".into()])] {
            assert_eq!(
                run_forecast(&latest_votes(&log), &registry, Some(&official), &method, &options),
                Err(ForecastError::InsufficientPriorData)
            );
        }
        assert_eq!(
            run_forecast(&latest_votes(&log), &registry, None, &Method::Standardized, &options),
            Err(ForecastError::MissingOfficialResults(Method::Standardized))
        );
    }

    #[test]
    fn abstainers_count_only_in_raw() {
        let registry = sample_registry();
        let mut log = vec![record("abstainer", 1, "KULANU", PriorVote::Abstained)];
        for i in 0..50 {
            log.push(record(
                &format!("l{i}"),
                10 + i,
                "LIKUD",
                PriorVote::Party("LIKUD_BEYTENU".into()),
            ));
        }
        let latest = latest_votes(&log);
        let options = ForecastOptions::for_registry(&registry).unwrap();
        let official = sample_official();
        let raw = run_forecast(&latest, &registry, Some(&official), &Method::Raw, &options).unwrap();
        let std = run_forecast(&latest, &registry, Some(&official), &Method::Standardized, &options).unwrap();
        assert_eq!(raw.votes.get("KULANU"), Some(1.0));
        assert_eq!(std.votes.get("KULANU"), Some(0.0));
        assert_eq!(
            std.sample,
            SampleSizes {
                devices: 51,
                with_prior: 51,
                used: 50
            }
        );
        assert_eq!(std.seats.get("LIKUD"), 120);
    }

    #[test]
    fn unknown_group_is_rejected() {
        let registry = sample_registry();
        let log = [record("a", 1, "LIKUD", PriorVote::Party("LIKUD_BEYTENU".into()))];
        let options = ForecastOptions::for_registry(&registry).unwrap();
        let official = sample_official();
        let method = Method::Fixed(vec!["AY".into(), "NOPE".into()]);
        assert_eq!(
            run_forecast(&latest_votes(&log), &registry, Some(&official), &method, &options),
            Err(ForecastError::UnknownGroup("NOPE".into()))
        );
    }

    #[test]
    fn pinning_an_overrepresented_party_cuts_its_seats() {
        let registry = sample_registry();
        let official = sample_official();
        let mut log = Vec::new();
        let mut seq = 0;
        let mut add = |n: usize, current: &str, prior: &str| {
            for _ in 0..n {
                seq += 1;
                log.push(record(&format!("d{seq}"), seq, current, PriorVote::Party(prior.into())));
            }
        };
        add(200, "LIKUD", "LIKUD_BEYTENU");
        add(120, "YESH_ATID", "YESH_ATID");
        add(120, "ZIONIST_UNION", "AVODA");
        add(80, "JEWISH_HOME", "JEWISH_HOME");
        add(60, "SHAS", "SHAS");
        add(60, "MERETZ", "MERETZ");
        // online activists: many Labor and Yesh Atid voters claim to switch to Ale Yarok
        add(60, "ALE_YAROK", "AVODA");
        add(50, "ALE_YAROK", "YESH_ATID");
        add(40, "ALE_YAROK", "ALE_YAROK");
        let latest = latest_votes(&log);
        let options = ForecastOptions::for_registry(&registry).unwrap();
        let std = run_forecast(&latest, &registry, Some(&official), &Method::Standardized, &options).unwrap();
        let fixed = run_forecast(
            &latest,
            &registry,
            Some(&official),
            &Method::Fixed(vec!["AY".into()]),
            &options,
        )
        .unwrap();
        assert!(std.seats.get("ALE_YAROK") >= 4, "{:?}", std.seats);
        assert_eq!(fixed.votes.get("ALE_YAROK"), Some(43_734.0));
        assert_eq!(fixed.seats.get("ALE_YAROK"), 0);
        assert_eq!(fixed.seats.total(), 120);
    }
}
