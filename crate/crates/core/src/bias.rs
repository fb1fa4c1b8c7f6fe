//! Sample-bias correction against the official prior-election results.
//!
//! Respondents are reduced to their latest vote, tallied into a counts
//! matrix `C` (rows: current parties, columns: prior parties), and the
//! columns of `C` are normalized into a transition matrix `M`. Multiplying
//! `M` by the official prior results `v` gives the forecast `f = M v`.
//!
//! Equivalently every respondent who reported prior party `j` carries the
//! weight `v[j] / c[j]`, where `c[j]` is the number of such respondents; the
//! weighted sample then reproduces the prior results exactly. Both routes are
//! exposed ([`forecast`] and [`weighted_tally`]) and must agree.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apportionment::VoteVector;
use crate::model::{FixedGroup, PartyCode, PartyRegistry};
use crate::record::{DeviceId, PriorVote, VoteRecord};

/// Predicted current-election votes per party.
pub type ForecastVector = VoteVector;

/// Latest effective vote per device.
pub type LatestVotes = BTreeMap<DeviceId, VoteRecord>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("none of the official results overlap the respondents' prior parties")]
    NoOverlap,
    #[error("results vector entry {0} is not a supported column of the transition matrix")]
    DimensionMismatch(PartyCode),
    #[error("groups `{0}` and `{1}` share party {2}")]
    OverlappingGroups(String, String, PartyCode),
    #[error("group `{group}`: no valid official count for prior party {party}")]
    MissingOfficialCount { group: String, party: PartyCode },
    #[error("group `{group}`: current party {party} is not in the forecast")]
    MissingForecastEntry { group: String, party: PartyCode },
    #[error("invalid results vector entry {value} for {party}")]
    InvalidResult { party: PartyCode, value: f64 },
}

/// Reduces a log to one record per device: the most recent by timestamp,
/// then by sequence number. When that record carries no prior vote it takes
/// the prior vote of the device's most recent record that does.
pub fn latest_votes<'a>(log: impl IntoIterator<Item = &'a VoteRecord>) -> LatestVotes {
    let mut latest: BTreeMap<&DeviceId, &VoteRecord> = BTreeMap::new();
    let mut disclosed: BTreeMap<&DeviceId, &VoteRecord> = BTreeMap::new();
    for record in log {
        let newer = |slot: Option<&&VoteRecord>| slot.is_none_or(|r| record.recency_cmp(r).is_gt());
        if newer(latest.get(&record.device_id)) {
            latest.insert(&record.device_id, record);
        }
        if record.prior.is_known() && newer(disclosed.get(&record.device_id)) {
            disclosed.insert(&record.device_id, record);
        }
    }
    latest
        .into_iter()
        .map(|(device, record)| {
            let mut merged = record.clone();
            if !merged.prior.is_known() {
                if let Some(known) = disclosed.get(device) {
                    merged.prior = known.prior.clone();
                }
            }
            (device.clone(), merged)
        })
        .collect()
}

/// Respondent tallies `C[i][j]`: devices voting current party `i` that
/// reported prior party `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsMatrix {
    rows: Vec<PartyCode>,
    cols: Vec<PartyCode>,
    counts: Vec<u64>,
}

impl CountsMatrix {
    pub fn zeros(rows: Vec<PartyCode>, cols: Vec<PartyCode>) -> Self {
        let counts = vec![0; rows.len() * cols.len()];
        CountsMatrix { rows, cols, counts }
    }

    pub fn from_row_major(rows: Vec<PartyCode>, cols: Vec<PartyCode>, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), rows.len() * cols.len(), "shape mismatch");
        CountsMatrix { rows, cols, counts }
    }

    pub fn rows(&self) -> &[PartyCode] {
        &self.rows
    }

    pub fn cols(&self) -> &[PartyCode] {
        &self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols.len() + col]
    }

    pub fn count(&self, current: &str, prior: &str) -> u64 {
        match (self.row_index(current), self.col_index(prior)) {
            (Some(i), Some(j)) => self.get(i, j),
            _ => 0,
        }
    }

    pub fn row_index(&self, code: &str) -> Option<usize> {
        self.rows.iter().position(|c| c.as_str() == code)
    }

    pub fn col_index(&self, code: &str) -> Option<usize> {
        self.cols.iter().position(|c| c.as_str() == code)
    }

    /// Adds one respondent; returns false if either code is not a row/column.
    pub fn increment(&mut self, current: &str, prior: &str) -> bool {
        match (self.row_index(current), self.col_index(prior)) {
            (Some(i), Some(j)) => {
                self.counts[i * self.cols.len() + j] += 1;
                true
            }
            _ => false,
        }
    }

    pub fn column_total(&self, col: usize) -> u64 {
        (0..self.rows.len()).map(|i| self.get(i, col)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Tallies devices that disclosed a prior party. Devices with an unknown or
/// abstained prior vote are left out.
pub fn build_counts(latest: &LatestVotes, registry: &PartyRegistry) -> CountsMatrix {
    let mut counts = CountsMatrix::zeros(registry.current_codes(), registry.prior_codes());
    for record in latest.values() {
        if let PriorVote::Party(prior) = &record.prior {
            counts.increment(record.current_party.as_str(), prior.as_str());
        }
    }
    counts
}

/// Column-stochastic `M[i][j]`: probability that a prior voter of `j` votes `i` now.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    rows: Vec<PartyCode>,
    cols: Vec<PartyCode>,
    probs: Vec<f64>,
    column_support: BTreeSet<PartyCode>,
}

impl TransitionMatrix {
    /// Builds a matrix from row-major probabilities. Columns with a zero sum
    /// are outside the support.
    pub fn from_row_major(rows: Vec<PartyCode>, cols: Vec<PartyCode>, probs: Vec<f64>) -> Self {
        assert_eq!(probs.len(), rows.len() * cols.len(), "shape mismatch");
        let column_support = cols
            .iter()
            .enumerate()
            .filter(|(j, _)| (0..rows.len()).any(|i| probs[i * cols.len() + j] != 0.0))
            .map(|(_, c)| c.clone())
            .collect();
        TransitionMatrix {
            rows,
            cols,
            probs,
            column_support,
        }
    }

    pub fn rows(&self) -> &[PartyCode] {
        &self.rows
    }

    pub fn cols(&self) -> &[PartyCode] {
        &self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.probs[row * self.cols.len() + col]
    }

    pub fn column_support(&self) -> &BTreeSet<PartyCode> {
        &self.column_support
    }

    pub fn column_sum(&self, col: usize) -> f64 {
        (0..self.rows.len()).map(|i| self.get(i, col)).sum()
    }
}

/// Divides every non-empty column of `counts` by its total.
pub fn normalize(counts: &CountsMatrix) -> TransitionMatrix {
    let (n_rows, n_cols) = (counts.rows.len(), counts.cols.len());
    let mut probs = vec![0.0; n_rows * n_cols];
    let mut column_support = BTreeSet::new();
    for j in 0..n_cols {
        let total = counts.column_total(j);
        if total == 0 {
            continue;
        }
        column_support.insert(counts.cols[j].clone());
        for i in 0..n_rows {
            probs[i * n_cols + j] = counts.get(i, j) as f64 / total as f64;
        }
    }
    TransitionMatrix {
        rows: counts.rows.clone(),
        cols: counts.cols.clone(),
        probs,
        column_support,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfficialRow {
    pub party: PartyCode,
    pub votes: u64,
    pub valid: bool,
}

/// Official results of the prior election. Rows with `valid == false` are
/// illegal or discarded ballots and never enter the forecast.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfficialResults {
    pub rows: Vec<OfficialRow>,
}

impl OfficialResults {
    pub fn valid_counts(&self) -> BTreeMap<PartyCode, u64> {
        self.rows
            .iter()
            .filter(|r| r.valid)
            .map(|r| (r.party.clone(), r.votes))
            .collect()
    }
}

impl FromIterator<(&'static str, u64)> for OfficialResults {
    fn from_iter<I: IntoIterator<Item = (&'static str, u64)>>(iter: I) -> Self {
        OfficialResults {
            rows: iter
                .into_iter()
                .map(|(p, votes)| OfficialRow {
                    party: p.into(),
                    votes,
                    valid: true,
                })
                .collect(),
        }
    }
}

/// Official prior votes `v[j]`, restricted to prior parties with respondents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResultsVector {
    entries: BTreeMap<PartyCode, f64>,
}

impl ResultsVector {
    /// Entries must be finite and positive.
    pub fn new(entries: BTreeMap<PartyCode, f64>) -> Result<Self, EngineError> {
        if let Some((party, value)) = entries.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(EngineError::InvalidResult {
                party: party.clone(),
                value: *value,
            });
        }
        Ok(ResultsVector { entries })
    }

    pub fn get(&self, party: &str) -> Option<f64> {
        self.entries.get(party).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PartyCode, f64)> {
        self.entries.iter().map(|(p, v)| (p, *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn scaled(&self, k: f64) -> Result<Self, EngineError> {
        ResultsVector::new(self.entries.iter().map(|(p, v)| (p.clone(), v * k)).collect())
    }
}

/// Keeps the valid, non-zero official counts of parties in the support of `matrix`.
pub fn build_results_vector(
    official: &OfficialResults,
    matrix: &TransitionMatrix,
) -> Result<ResultsVector, EngineError> {
    let entries: BTreeMap<PartyCode, f64> = official
        .valid_counts()
        .into_iter()
        .filter(|(party, votes)| *votes > 0 && matrix.column_support.contains(party))
        .map(|(party, votes)| (party, votes as f64))
        .collect();
    if entries.is_empty() {
        return Err(EngineError::NoOverlap);
    }
    ResultsVector::new(entries)
}

/// `f[i] = sum_j M[i][j] * v[j]`.
pub fn forecast(matrix: &TransitionMatrix, results: &ResultsVector) -> Result<ForecastVector, EngineError> {
    let mut columns = Vec::with_capacity(results.len());
    for (party, votes) in results.iter() {
        let j = matrix
            .cols
            .iter()
            .position(|c| c == party)
            .filter(|_| matrix.column_support.contains(party))
            .ok_or_else(|| EngineError::DimensionMismatch(party.clone()))?;
        columns.push((j, votes));
    }
    Ok(matrix
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let value = columns.iter().map(|&(j, votes)| matrix.get(i, j) * votes).sum();
            (row.clone(), value)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightClass {
    pub respondents: u64,
    pub weight: f64,
    /// Fewer respondents than the floor; the weight is unreliable.
    pub small: bool,
}

/// Per prior party: respondent count `c[j]` and weight `v[j] / c[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub floor: u64,
    pub classes: BTreeMap<PartyCode, WeightClass>,
}

impl WeightTable {
    pub fn weight(&self, prior: &str) -> Option<f64> {
        self.classes.get(prior).map(|c| c.weight)
    }

    pub fn small_classes(&self) -> impl Iterator<Item = &PartyCode> {
        self.classes.iter().filter(|(_, c)| c.small).map(|(p, _)| p)
    }
}

pub const DEFAULT_SMALL_CLASS_FLOOR: u64 = 30;

pub fn respondent_weights(counts: &CountsMatrix, results: &ResultsVector, floor: u64) -> WeightTable {
    let classes = results
        .iter()
        .filter_map(|(party, votes)| {
            let respondents = counts.col_index(party.as_str()).map_or(0, |j| counts.column_total(j));
            debug_assert!(respondents > 0, "results vector restricted to supported columns");
            (respondents > 0).then(|| {
                let class = WeightClass {
                    respondents,
                    weight: votes / respondents as f64,
                    small: respondents < floor,
                };
                (party.clone(), class)
            })
        })
        .collect();
    WeightTable { floor, classes }
}

/// Sums respondent weights by current party: the per-respondent route to the forecast.
pub fn weighted_tally(latest: &LatestVotes, weights: &WeightTable, parties: &[PartyCode]) -> VoteVector {
    let mut tally: VoteVector = parties.iter().map(|p| (p.clone(), 0.0)).collect();
    for record in latest.values() {
        if let Some(w) = record.prior.party().and_then(|p| weights.weight(p.as_str())) {
            tally.add(&record.current_party, w);
        }
    }
    tally
}

/// Unweighted count of latest current votes. `parties` seeds zero entries.
pub fn raw_forecast(latest: &LatestVotes, parties: &[PartyCode]) -> VoteVector {
    let mut tally: VoteVector = parties.iter().map(|p| (p.clone(), 0.0)).collect();
    for record in latest.values() {
        tally.add(&record.current_party, 1.0);
    }
    tally
}

/// Sum of a group's current parties, folded in code order.
pub fn group_total(forecast: &ForecastVector, group: &FixedGroup) -> f64 {
    group
        .current_parties
        .iter()
        .map(|p| forecast.get(p.as_str()).unwrap_or(0.0))
        .fold(0.0, |acc, v| acc + v)
}

/// Pins each group's current-party total to the official prior total of its
/// prior parties. Members are rescaled in proportion to their forecast (an
/// equal split if the group forecast is zero); other parties are untouched.
pub fn apply_group_fixes(
    forecast: &ForecastVector,
    groups: &[&FixedGroup],
    official: &OfficialResults,
) -> Result<ForecastVector, EngineError> {
    check_disjoint(groups)?;
    let valid = official.valid_counts();
    let mut fixed = forecast.clone();

    for group in groups {
        let mut target = 0.0;
        for party in &group.prior_parties {
            let votes = valid.get(party).ok_or_else(|| EngineError::MissingOfficialCount {
                group: group.id.clone(),
                party: party.clone(),
            })?;
            target += *votes as f64;
        }
        let mut members = Vec::with_capacity(group.current_parties.len());
        for party in &group.current_parties {
            let votes = forecast
                .get(party.as_str())
                .ok_or_else(|| EngineError::MissingForecastEntry {
                    group: group.id.clone(),
                    party: party.clone(),
                })?;
            members.push(votes);
        }

        for (party, votes) in group.current_parties.iter().zip(pin_total(&members, target)) {
            fixed.insert(party.clone(), votes);
        }
        debug_assert_eq!(group_total(&fixed, group), target);
    }
    Ok(fixed)
}

fn check_disjoint(groups: &[&FixedGroup]) -> Result<(), EngineError> {
    let mut prior_owner: BTreeMap<&PartyCode, &str> = BTreeMap::new();
    let mut current_owner: BTreeMap<&PartyCode, &str> = BTreeMap::new();
    for group in groups {
        for (members, owners) in [
            (&group.prior_parties, &mut prior_owner),
            (&group.current_parties, &mut current_owner),
        ] {
            for party in members {
                if let Some(other) = owners.insert(party, &group.id) {
                    return Err(EngineError::OverlappingGroups(
                        other.into(),
                        group.id.clone(),
                        party.clone(),
                    ));
                }
            }
        }
    }
    Ok(())
}

fn fold_sum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v)
}

/// Rescales `values` so that their left-to-right sum is exactly `target`.
fn pin_total(values: &[f64], target: f64) -> Vec<f64> {
    let sum = fold_sum(values);
    let mut pinned: Vec<f64> = if sum > 0.0 {
        values.iter().map(|v| target * (v / sum)).collect()
    } else {
        vec![target / values.len() as f64; values.len()]
    };
    // Absorb rounding residue into one member. The last member in fold order
    // is tried first: the final addition alone decides the rounded total.
    for k in (0..pinned.len()).rev() {
        if fold_sum(&pinned) == target {
            break;
        }
        let coarse = pinned[k] + (target - fold_sum(&pinned));
        let mut candidates = vec![coarse];
        let (mut up, mut down) = (coarse, coarse);
        for _ in 0..8 {
            up = up.next_up();
            down = down.next_down();
            candidates.extend([up, down]);
        }
        let original = pinned[k];
        let hit = candidates.into_iter().filter(|x| *x >= 0.0).find(|x| {
            pinned[k] = *x;
            fold_sum(&pinned) == target
        });
        pinned[k] = hit.unwrap_or(original);
    }
    pinned
}
