//! Bader-Offer seat apportionment (the Hagenbach-Bischoff quota followed by
//! highest averages), with an electoral threshold and no surplus-vote
//! agreements.
//!
//! Vote counts are `f64` because reweighted forecasts are not integral. Every
//! finite `f64` is an exact dyadic rational, so thresholds, quota floors and
//! quotient comparisons are all carried out on exact rationals and no
//! epsilon is involved.
//!
//! Equal quotients are broken by the higher vote count, then by the
//! lexicographically smaller party code.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{PartyCode, ThresholdFraction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApportionError {
    #[error("empty electorate: no party has any votes")]
    EmptyElectorate,
    #[error("no party reaches the threshold")]
    NoQualifyingParty,
    #[error("house size must be at least 1")]
    InvalidHouseSize,
    #[error("invalid vote count {value} for party {party}")]
    InvalidVotes { party: PartyCode, value: f64 },
}

/// Vote counts per party, real-valued and non-negative.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoteVector {
    entries: BTreeMap<PartyCode, f64>,
}

impl VoteVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, party: PartyCode, votes: f64) {
        self.entries.insert(party, votes);
    }

    pub fn add(&mut self, party: &PartyCode, votes: f64) {
        *self.entries.entry(party.clone()).or_insert(0.0) += votes;
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

    pub fn as_map(&self) -> &BTreeMap<PartyCode, f64> {
        &self.entries
    }

    /// Checks that every entry is finite and non-negative.
    pub fn validate(&self) -> Result<(), ApportionError> {
        match self.entries.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            Some((party, value)) => Err(ApportionError::InvalidVotes {
                party: party.clone(),
                value: *value,
            }),
            None => Ok(()),
        }
    }
}

impl FromIterator<(PartyCode, f64)> for VoteVector {
    fn from_iter<I: IntoIterator<Item = (PartyCode, f64)>>(iter: I) -> Self {
        VoteVector {
            entries: iter.into_iter().collect(),
        }
    }
}

impl<'a> FromIterator<(&'a str, f64)> for VoteVector {
    fn from_iter<I: IntoIterator<Item = (&'a str, f64)>>(iter: I) -> Self {
        iter.into_iter().map(|(p, v)| (PartyCode::from(p), v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeatAllocation {
    pub seats: BTreeMap<PartyCode, u32>,
    pub house_size: u32,
}

impl SeatAllocation {
    pub fn total(&self) -> u32 {
        self.seats.values().sum()
    }

    pub fn get(&self, party: &str) -> u32 {
        self.seats.get(party).copied().unwrap_or(0)
    }
}

fn exact(value: f64) -> BigRational {
    BigRational::from_float(value).expect("vote counts are validated finite")
}

/// Parties whose votes are positive and at least `threshold` of the total.
pub fn apply_threshold(
    votes: &VoteVector,
    threshold: &ThresholdFraction,
) -> Result<BTreeSet<PartyCode>, ApportionError> {
    votes.validate()?;
    let exact_votes: Vec<(&PartyCode, BigRational)> = votes.iter().map(|(p, v)| (p, exact(v))).collect();
    let total: BigRational = exact_votes.iter().map(|(_, v)| v.clone()).sum();
    if total.is_zero() {
        return Err(ApportionError::EmptyElectorate);
    }
    let bar = threshold.as_ratio() * &total;
    Ok(exact_votes
        .into_iter()
        .filter(|(_, v)| !v.is_zero() && *v >= bar)
        .map(|(p, _)| p.clone())
        .collect())
}

/// Allocates `house_size` seats among the parties of `votes`.
///
/// Parties below the threshold are dropped. Each qualifying party first gets
/// `floor(votes / index)` seats where `index = qualifying total / house_size`;
/// the seats left over go one at a time to the party with the largest
/// `votes / (seats + 1)`. Every input party appears in the result.
pub fn allocate_seats(
    votes: &VoteVector,
    house_size: u32,
    threshold: &ThresholdFraction,
) -> Result<SeatAllocation, ApportionError> {
    let qualifying = apply_threshold(votes, threshold)?;
    if house_size < 1 {
        return Err(ApportionError::InvalidHouseSize);
    }
    if qualifying.is_empty() {
        return Err(ApportionError::NoQualifyingParty);
    }

    struct Contender<'a> {
        code: &'a PartyCode,
        votes: BigRational,
        seats: u32,
    }

    let mut contenders: Vec<Contender<'_>> = votes
        .iter()
        .filter(|(p, _)| qualifying.contains(*p))
        .map(|(code, v)| Contender {
            code,
            votes: exact(v),
            seats: 0,
        })
        .collect();

    let moded: BigRational = contenders.iter().map(|c| c.votes.clone()).sum();
    let house = BigRational::from_integer(BigInt::from(house_size));
    let mut assigned = 0u32;
    for c in &mut contenders {
        let quota_seats = (&c.votes * &house / &moded).floor().to_integer();
        c.seats = quota_seats.to_u32().expect("quota seats never exceed the house size");
        assigned += c.seats;
    }
    debug_assert!(assigned <= house_size);

    for _ in assigned..house_size {
        let best = contenders
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                let qa = &a.votes / BigInt::from(a.seats + 1);
                let qb = &b.votes / BigInt::from(b.seats + 1);
                qa.cmp(&qb)
                    .then_with(|| a.votes.cmp(&b.votes))
                    .then_with(|| b.code.cmp(a.code))
            })
            .map(|(i, _)| i)
            .expect("at least one qualifying party");
        contenders[best].seats += 1;
    }

    let mut seats: BTreeMap<PartyCode, u32> = votes.iter().map(|(p, _)| (p.clone(), 0)).collect();
    for c in contenders {
        seats.insert(c.code.clone(), c.seats);
    }
    Ok(SeatAllocation { seats, house_size })
}

/// Plain sequential highest averages (D'Hondt): `house_size` rounds, each
/// awarding one seat to the party with the largest `votes / (seats + 1)`.
///
/// No threshold is applied; pass only qualifying parties. This runs on its
/// own integer arithmetic and serves as a reference for [`allocate_seats`].
pub fn dhondt_oracle(votes: &VoteVector, house_size: u32) -> Result<SeatAllocation, ApportionError> {
    votes.validate()?;
    if votes.iter().all(|(_, v)| v == 0.0) {
        return Err(ApportionError::EmptyElectorate);
    }
    if house_size < 1 {
        return Err(ApportionError::InvalidHouseSize);
    }

    let scaled = scale_to_integers(votes.iter().map(|(_, v)| v));
    let codes: Vec<&PartyCode> = votes.iter().map(|(p, _)| p).collect();
    let mut seats = vec![0u32; codes.len()];

    // a/(s+1) vs b/(t+1)  <=>  a*(t+1) vs b*(s+1)
    let compare = |i: usize, k: usize, seats: &[u32]| -> Ordering {
        let lhs = &scaled[i] * BigUint::from(seats[k] + 1);
        let rhs = &scaled[k] * BigUint::from(seats[i] + 1);
        lhs.cmp(&rhs)
            .then_with(|| scaled[i].cmp(&scaled[k]))
            .then_with(|| codes[k].cmp(codes[i]))
    };

    for _ in 0..house_size {
        let mut best = 0;
        for i in 1..codes.len() {
            if compare(i, best, &seats) == Ordering::Greater {
                best = i;
            }
        }
        seats[best] += 1;
    }

    Ok(SeatAllocation {
        seats: codes.into_iter().cloned().zip(seats).collect(),
        house_size,
    })
}

/// Writes each non-negative finite float as `m * 2^e` and rescales all of
/// them to integers over the smallest exponent present.
fn scale_to_integers(values: impl Iterator<Item = f64>) -> Vec<BigUint> {
    let decoded: Vec<(u64, i16)> = values
        .map(|v| {
            let (mantissa, exponent, _) = num_traits::Float::integer_decode(v);
            (mantissa, exponent)
        })
        .collect();
    let base = decoded
        .iter()
        .filter(|(m, _)| *m != 0)
        .map(|(_, e)| *e)
        .min()
        .unwrap_or(0);
    decoded
        .into_iter()
        .map(|(m, e)| {
            if m == 0 {
                BigUint::zero()
            } else {
                BigUint::from(m) << ((e - base) as usize)
            }
        })
        .collect()
}
