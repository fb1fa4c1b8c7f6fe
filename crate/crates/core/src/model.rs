//! Elections, parties and the registry that ties a prior election to the
//! current one.
//!
//! The registry is loaded once and shared read-only. It names the two
//! elections the forecast works between, lists every party of each, and
//! declares the fixed demographic groups whose current vote totals can be
//! pinned to their prior-election totals.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Case-sensitive party identifier, unique within one election.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartyCode(String);

impl PartyCode {
    pub fn new(code: impl Into<String>) -> Self {
        PartyCode(code.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Codes are non-empty printable ASCII without whitespace.
    pub fn is_well_formed(&self) -> bool {
        !self.0.is_empty() && self.0.bytes().all(|b| b.is_ascii_graphic())
    }
}

impl Borrow<str> for PartyCode {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PartyCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PartyCode {
    fn from(code: &str) -> Self {
        PartyCode(code.to_owned())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FractionError {
    #[error("`{0}` is not a decimal number")]
    Malformed(String),
    #[error("threshold {0} is outside [0, 1)")]
    OutOfRange(String),
}

/// An exact rational fraction, written and read as a decimal.
///
/// Thresholds such as `0.0325` have no exact binary representation, so the
/// value is kept as the rational the decimal denotes. Comparisons against
/// vote counts then have no rounding at the boundary.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ThresholdFraction(BigRational);

impl ThresholdFraction {
    pub fn zero() -> Self {
        ThresholdFraction(BigRational::zero())
    }

    /// Parses a plain decimal (`0.0325`, `.02`, `0`) into an exact fraction in `[0, 1)`.
    pub fn parse(text: &str) -> Result<Self, FractionError> {
        let raw = parse_decimal(text.trim()).ok_or_else(|| FractionError::Malformed(text.into()))?;
        let fraction = ThresholdFraction(raw);
        if fraction.in_range() {
            Ok(fraction)
        } else {
            Err(FractionError::OutOfRange(text.into()))
        }
    }

    /// Interprets a float by its shortest round-trip decimal form, so `0.0325`
    /// becomes exactly 325/10000. No range check; see [`Self::in_range`].
    pub fn from_f64(value: f64) -> Option<Self> {
        if !value.is_finite() {
            return None;
        }
        parse_decimal(&format!("{value}")).map(ThresholdFraction)
    }

    pub fn in_range(&self) -> bool {
        self.0 >= BigRational::zero() && self.0 < BigRational::one()
    }

    pub fn as_ratio(&self) -> &BigRational {
        &self.0
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for ThresholdFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl Serialize for ThresholdFraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for ThresholdFraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        ThresholdFraction::from_f64(value).ok_or_else(|| serde::de::Error::custom(format!("invalid threshold {value}")))
    }
}

fn parse_decimal(text: &str) -> Option<BigRational> {
    let (negative, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().ok()?
    };
    let denom = num_traits::pow(BigInt::from(10u32), frac_part.len());
    let value = BigRational::new(numer, denom);
    Some(if negative { -value } else { value })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Election {
    pub id: String,
    pub house_size: u32,
    pub threshold_fraction: ThresholdFraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Party {
    pub code: PartyCode,
    pub election: String,
    pub display_name: String,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub group_tags: BTreeSet<String>,
}

/// A sectorial bloc whose current-election vote total is pinned to the
/// official prior-election total of `prior_parties`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedGroup {
    pub id: String,
    pub prior_parties: BTreeSet<PartyCode>,
    pub current_parties: BTreeSet<PartyCode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartyRegistry {
    pub elections: Vec<Election>,
    pub parties: Vec<Party>,
    #[serde(default)]
    pub fixed_groups: Vec<FixedGroup>,
    pub abstention_code: PartyCode,
    /// Defaults to the last entry of `elections`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_election: Option<String>,
    /// Defaults to the entry before the current one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_election: Option<String>,
}

/// Outcome of resolving a code against one election.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Resolved<'a> {
    Party(&'a Party),
    Abstained,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no party `{code}` in election {election}")]
pub struct NotFound {
    pub election: String,
    pub code: String,
}

impl PartyRegistry {
    pub fn current_election_id(&self) -> Option<&str> {
        match &self.current_election {
            Some(id) => Some(id),
            None => self.elections.last().map(|e| e.id.as_str()),
        }
    }

    pub fn prior_election_id(&self) -> Option<&str> {
        if let Some(id) = &self.prior_election {
            return Some(id);
        }
        let current = self.current_election_id()?;
        let pos = self.elections.iter().position(|e| e.id == current)?;
        pos.checked_sub(1).map(|p| self.elections[p].id.as_str())
    }

    pub fn election(&self, id: &str) -> Option<&Election> {
        self.elections.iter().find(|e| e.id == id)
    }

    pub fn current(&self) -> Option<&Election> {
        self.current_election_id().and_then(|id| self.election(id))
    }

    pub fn prior(&self) -> Option<&Election> {
        self.prior_election_id().and_then(|id| self.election(id))
    }

    /// Parties of one election in registry order.
    pub fn parties_of<'a>(&'a self, election: &'a str) -> impl Iterator<Item = &'a Party> + 'a {
        self.parties.iter().filter(move |p| p.election == election)
    }

    pub fn current_codes(&self) -> Vec<PartyCode> {
        self.current_election_id()
            .map(|id| self.parties_of(id).map(|p| p.code.clone()).collect())
            .unwrap_or_default()
    }

    pub fn prior_codes(&self) -> Vec<PartyCode> {
        self.prior_election_id()
            .map(|id| self.parties_of(id).map(|p| p.code.clone()).collect())
            .unwrap_or_default()
    }

    pub fn group(&self, id: &str) -> Option<&FixedGroup> {
        self.fixed_groups.iter().find(|g| g.id == id)
    }

    /// Exact code lookup within `election`. The abstention code resolves to
    /// [`Resolved::Abstained`] rather than a party.
    pub fn resolve(&self, election: &str, code: &str) -> Result<Resolved<'_>, NotFound> {
        if code == self.abstention_code.as_str() {
            return Ok(Resolved::Abstained);
        }
        self.parties
            .iter()
            .find(|p| p.election == election && p.code.as_str() == code)
            .map(Resolved::Party)
            .ok_or_else(|| NotFound {
                election: election.into(),
                code: code.into(),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationKind {
    MissingElection,
    DuplicateElection,
    InvalidHouseSize,
    InvalidThreshold,
    UnknownElection,
    MalformedCode,
    DuplicatePartyCode,
    AbstentionCodeCollision,
    DuplicateGroupId,
    EmptyGroup,
    UnknownPartyReference,
    OverlappingPriorParties,
    OverlappingCurrentParties,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub kind: ViolationKind,
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Lists every invariant violation in `registry`; an empty list means valid.
pub fn validate_registry(registry: &PartyRegistry) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, path: String, message: String| out.push(Violation { kind, path, message });

    let mut seen_elections = BTreeSet::new();
    for (i, e) in registry.elections.iter().enumerate() {
        let path = format!("elections[{i}]");
        if !seen_elections.insert(e.id.as_str()) {
            push(
                ViolationKind::DuplicateElection,
                path.clone(),
                format!("duplicate election id `{}`", e.id),
            );
        }
        if e.house_size < 1 {
            push(
                ViolationKind::InvalidHouseSize,
                format!("{path}.house_size"),
                "house_size must be at least 1".into(),
            );
        }
        if !e.threshold_fraction.in_range() {
            push(
                ViolationKind::InvalidThreshold,
                format!("{path}.threshold_fraction"),
                format!("threshold {} is outside [0, 1)", e.threshold_fraction),
            );
        }
    }

    let current = registry.current_election_id();
    let prior = registry.prior_election_id();
    for (role, id) in [("current_election", current), ("prior_election", prior)] {
        match id {
            None => push(
                ViolationKind::MissingElection,
                role.into(),
                format!("no {role} can be determined"),
            ),
            Some(id) if registry.election(id).is_none() => push(
                ViolationKind::UnknownElection,
                role.into(),
                format!("election `{id}` is not declared"),
            ),
            Some(_) => {}
        }
    }
    if current.is_some() && current == prior {
        push(
            ViolationKind::DuplicateElection,
            "prior_election".into(),
            "prior and current election must differ".into(),
        );
    }

    let mut codes: BTreeSet<(&str, &str)> = BTreeSet::new();
    for (i, p) in registry.parties.iter().enumerate() {
        let path = format!("parties[{i}]");
        if registry.election(&p.election).is_none() {
            push(
                ViolationKind::UnknownElection,
                format!("{path}.election"),
                format!("election `{}` is not declared", p.election),
            );
        }
        if !p.code.is_well_formed() {
            push(
                ViolationKind::MalformedCode,
                format!("{path}.code"),
                format!("malformed party code `{}`", p.code),
            );
        }
        if !codes.insert((p.election.as_str(), p.code.as_str())) {
            push(
                ViolationKind::DuplicatePartyCode,
                format!("{path}.code"),
                format!("party code `{}` repeated in election {}", p.code, p.election),
            );
        }
        if p.code == registry.abstention_code {
            push(
                ViolationKind::AbstentionCodeCollision,
                format!("{path}.code"),
                format!("party code `{}` is the reserved abstention code", p.code),
            );
        }
    }
    if !registry.abstention_code.is_well_formed() {
        push(
            ViolationKind::MalformedCode,
            "abstention_code".into(),
            format!("malformed abstention code `{}`", registry.abstention_code),
        );
    }

    let mut group_ids = BTreeSet::new();
    let mut prior_owner: BTreeMap<&PartyCode, &str> = BTreeMap::new();
    let mut current_owner: BTreeMap<&PartyCode, &str> = BTreeMap::new();
    for (i, g) in registry.fixed_groups.iter().enumerate() {
        let path = format!("fixed_groups[{i}]");
        if !group_ids.insert(g.id.as_str()) {
            push(
                ViolationKind::DuplicateGroupId,
                format!("{path}.id"),
                format!("duplicate group id `{}`", g.id),
            );
        }
        let sides = [
            (
                "prior_parties",
                prior,
                &g.prior_parties,
                &mut prior_owner,
                ViolationKind::OverlappingPriorParties,
            ),
            (
                "current_parties",
                current,
                &g.current_parties,
                &mut current_owner,
                ViolationKind::OverlappingCurrentParties,
            ),
        ];
        for (field, election, members, owners, overlap_kind) in sides {
            if members.is_empty() {
                push(
                    ViolationKind::EmptyGroup,
                    format!("{path}.{field}"),
                    format!("group `{}` has no {field}", g.id),
                );
            }
            for code in members {
                let known = election
                    .map(|e| registry.parties_of(e).any(|p| &p.code == code))
                    .unwrap_or(false);
                if !known {
                    push(
                        ViolationKind::UnknownPartyReference,
                        format!("{path}.{field}"),
                        format!("group `{}` references unknown party `{code}`", g.id),
                    );
                }
                if let Some(other) = owners.insert(code, g.id.as_str()) {
                    if other != g.id {
                        push(
                            overlap_kind,
                            format!("{path}.{field}"),
                            format!("overlapping {field}: `{code}` is in groups `{other}` and `{}`", g.id),
                        );
                    }
                }
            }
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::sample_registry;

    #[test]
    fn sample_registry_is_valid() {
        let registry = sample_registry();
        assert_eq!(registry.current_codes().len(), 12);
        assert_eq!(registry.fixed_groups.len(), 4);
        assert_eq!(validate_registry(&registry), vec![]);
    }

    #[test]
    fn overlapping_prior_party_is_reported_once() {
        let mut registry = sample_registry();
        let shas = PartyCode::from("SHAS");
        registry.fixed_groups[1].prior_parties.insert(shas);
        let report = validate_registry(&registry);
        assert_eq!(report.len(), 1, "{report:?}");
        assert_eq!(report[0].kind, ViolationKind::OverlappingPriorParties);
        assert!(report[0].message.contains("overlapping prior_parties"));
    }

    #[test]
    fn empty_party_list_flags_every_group_reference() {
        let mut registry = sample_registry();
        registry.parties.clear();
        let references: usize = registry
            .fixed_groups
            .iter()
            .map(|g| g.prior_parties.len() + g.current_parties.len())
            .sum();
        let report = validate_registry(&registry);
        let unknown = report
            .iter()
            .filter(|v| v.kind == ViolationKind::UnknownPartyReference)
            .count();
        assert_eq!(unknown, references);
        assert_eq!(report.len(), references);
    }

    #[test]
    fn validation_is_deterministic() {
        let mut registry = sample_registry();
        registry.elections[0].house_size = 0;
        registry.parties.push(registry.parties[0].clone());
        assert_eq!(validate_registry(&registry), validate_registry(&registry));
        assert_eq!(validate_registry(&registry).len(), 2);
    }

    #[test]
    fn abstention_code_may_not_name_a_party() {
        let mut registry = sample_registry();
        registry.abstention_code = PartyCode::from("LIKUD");
        let kinds: Vec<_> = validate_registry(&registry).into_iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::AbstentionCodeCollision]);
    }

    #[test]
    fn resolves_parties_and_abstention() {
        let registry = sample_registry();
        match registry.resolve("2015", "ALE_YAROK") {
            Ok(Resolved::Party(p)) => assert_eq!(p.display_name, "Ale Yarok"),
            other => panic!("unexpected {other:?}"),
        }
        let abstain = registry.abstention_code.as_str().to_owned();
        assert_eq!(registry.resolve("2013", &abstain), Ok(Resolved::Abstained));
        assert_eq!(
            registry.resolve("2015", "NO_SUCH"),
            Err(NotFound {
                election: "2015".into(),
                code: "NO_SUCH".into()
            })
        );
        // codes are case-sensitive
        assert!(registry.resolve("2015", "ale_yarok").is_err());
    }

    #[test]
    fn group_members_always_resolve_in_a_valid_registry() {
        let registry = sample_registry();
        for g in &registry.fixed_groups {
            for code in &g.prior_parties {
                assert!(registry.resolve("2013", code.as_str()).is_ok());
            }
            for code in &g.current_parties {
                assert!(registry.resolve("2015", code.as_str()).is_ok());
            }
        }
    }

    #[test]
    fn election_roles_default_to_the_last_two() {
        let mut registry = sample_registry();
        registry.current_election = None;
        registry.prior_election = None;
        assert_eq!(registry.current_election_id(), Some("2015"));
        assert_eq!(registry.prior_election_id(), Some("2013"));
    }

    #[test]
    fn threshold_parses_exact_decimals() {
        let t = ThresholdFraction::parse("0.0325").unwrap();
        assert_eq!(t.as_ratio(), &BigRational::new(BigInt::from(13), BigInt::from(400)));
        assert_eq!(ThresholdFraction::from_f64(0.0325), Some(t));
        assert_eq!(ThresholdFraction::parse(".02").unwrap().to_f64(), 0.02);
        assert!(matches!(
            ThresholdFraction::parse("1"),
            Err(FractionError::OutOfRange(_))
        ));
        assert!(matches!(
            ThresholdFraction::parse("-0.1"),
            Err(FractionError::OutOfRange(_))
        ));
        assert!(matches!(
            ThresholdFraction::parse("3%"),
            Err(FractionError::Malformed(_))
        ));
        assert!(matches!(
            ThresholdFraction::parse("."),
            Err(FractionError::Malformed(_))
        ));
    }

    #[test]
    fn registry_json_round_trips() {
        let registry = sample_registry();
        let text = serde_json::to_string(&registry).unwrap();
        let back: PartyRegistry = serde_json::from_str(&text).unwrap();
        assert_eq!(back, registry);
    }
}
