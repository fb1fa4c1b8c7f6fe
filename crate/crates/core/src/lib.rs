//! Forecasting core for a live election poll.
//!
//! Respondents report their current vote and, optionally, their vote in the
//! prior election. [`bias`] reweights the sample so that it agrees with the
//! official prior results, [`apportionment`] turns votes into seats, and
//! [`pipeline`] chains them for each forecast method.

pub mod apportionment;
pub mod bias;
pub mod fixtures;
pub mod model;
pub mod pipeline;
pub mod record;

pub use apportionment::{allocate_seats, apply_threshold, dhondt_oracle, ApportionError, SeatAllocation, VoteVector};
pub use bias::{
    apply_group_fixes, build_counts, build_results_vector, forecast, latest_votes, normalize, raw_forecast,
    respondent_weights, weighted_tally, CountsMatrix, EngineError, ForecastVector, LatestVotes, OfficialResults,
    OfficialRow, ResultsVector, TransitionMatrix, WeightTable,
};
pub use model::{
    validate_registry, Election, FixedGroup, Party, PartyCode, PartyRegistry, Resolved, ThresholdFraction, Violation,
};
pub use pipeline::{
    run_forecast, ForecastError, ForecastOptions, ForecastOutcome, Method, MethodParseError, SampleSizes,
};
pub use record::{DeviceId, PriorVote, VoteRecord};
