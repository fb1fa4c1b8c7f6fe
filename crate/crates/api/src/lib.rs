//! HTTP+JSON service over a [`VoteStore`].
//!
//! Votes are appended through the store's single write path; every read
//! works on an immutable snapshot. Forecasts are cached per method and
//! recomputed only when the store's high-water mark has moved.
//!
//! The endpoint reference lives in `docs/api.md`.

mod error;
mod limit;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use pollcast_core::{
    run_forecast, FixedGroup, ForecastOptions, Method, OfficialResults, Party, PartyCode, PartyRegistry, SampleSizes,
    ThresholdFraction, VoteVector,
};
use pollcast_store::wire::format_timestamp;
use pollcast_store::{LogLine, Snapshot, VoteStore};
use serde::{Deserialize, Serialize};

pub use error::{ApiError, ErrorBody};
pub use limit::{RateLimitConfig, RateLimiter};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub rate_limit: RateLimitConfig,
    /// Overrides the default small weight-class floor.
    pub small_class_floor: Option<u64>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: Arc<VoteStore>,
    official: Option<Arc<OfficialResults>>,
    options: ForecastOptions,
    cache: Mutex<HashMap<Method, Arc<ForecastResponse>>>,
    limiter: RateLimiter,
    clock: Clock,
}

impl AppState {
    pub fn new(
        store: Arc<VoteStore>,
        official: Option<OfficialResults>,
        config: ServiceConfig,
    ) -> Result<Self, String> {
        Self::with_clock(store, official, config, Arc::new(Utc::now))
    }

    pub fn with_clock(
        store: Arc<VoteStore>,
        official: Option<OfficialResults>,
        config: ServiceConfig,
        clock: Clock,
    ) -> Result<Self, String> {
        let mut options = ForecastOptions::for_registry(store.registry())
            .ok_or_else(|| "registry has no current election".to_owned())?;
        if let Some(floor) = config.small_class_floor {
            options.small_class_floor = floor;
        }
        Ok(AppState {
            inner: Arc::new(Inner {
                store,
                official: official.map(Arc::new),
                options,
                cache: Mutex::new(HashMap::new()),
                limiter: RateLimiter::new(config.rate_limit),
                clock,
            }),
        })
    }

    pub fn store(&self) -> &Arc<VoteStore> {
        &self.inner.store
    }

    fn registry(&self) -> &PartyRegistry {
        self.inner.store.registry()
    }

    /// Forecast for `method` on the current snapshot, from cache when the
    /// snapshot has not moved.
    pub fn forecast(&self, method: &Method) -> Result<Arc<ForecastResponse>, ApiError> {
        let snapshot = self.inner.store.snapshot();
        let high_water = snapshot.high_water();
        if let Some(hit) = self.cache().get(method).filter(|r| r.high_water == high_water) {
            return Ok(Arc::clone(hit));
        }
        let response = Arc::new(self.compute(method, &snapshot)?);
        let mut cache = self.cache();
        // a concurrent request may already have cached a newer snapshot
        let newer_cached = cache.get(method).is_some_and(|r| r.high_water > high_water);
        if !newer_cached {
            cache.insert(method.clone(), Arc::clone(&response));
        }
        Ok(response)
    }

    fn cache(&self) -> std::sync::MutexGuard<'_, HashMap<Method, Arc<ForecastResponse>>> {
        self.inner.cache.lock().expect("forecast cache poisoned")
    }

    fn compute(&self, method: &Method, snapshot: &Snapshot) -> Result<ForecastResponse, ApiError> {
        let latest = snapshot.latest();
        let outcome = run_forecast(
            &latest,
            self.registry(),
            self.inner.official.as_deref(),
            method,
            &self.inner.options,
        )?;
        Ok(ForecastResponse {
            method: outcome.method,
            house_size: outcome.seats.house_size,
            seats: outcome.seats.seats,
            shares: outcome.shares,
            votes: outcome.votes,
            sample: outcome.sample,
            small_classes: outcome.small_classes,
            high_water: snapshot.high_water(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastResponse {
    #[serde(flatten)]
    pub method: Method,
    pub house_size: u32,
    pub seats: BTreeMap<PartyCode, u32>,
    /// Fraction of the forecast vote total.
    pub shares: BTreeMap<PartyCode, f64>,
    pub votes: VoteVector,
    pub sample: SampleSizes,
    /// Prior parties whose weights rest on few respondents.
    pub small_classes: Vec<PartyCode>,
    /// Sequence number of the last event in the snapshot used.
    pub high_water: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartiesResponse {
    pub election: String,
    pub house_size: u32,
    pub threshold: ThresholdFraction,
    pub parties: Vec<Party>,
    pub prior_election: Option<String>,
    pub prior_parties: Vec<Party>,
    pub abstention_code: PartyCode,
    pub groups: Vec<FixedGroup>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VoteRequest {
    pub device_id: Option<String>,
    pub party_2015: Option<String>,
    #[serde(default)]
    pub party_2013: Option<String>,
    #[serde(default)]
    pub region: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteAck {
    pub seq: u64,
    pub device_id: String,
    pub ts: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryResponse {
    pub device_id: String,
    pub events: Vec<LogLine>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub high_water: u64,
    pub devices: usize,
    /// Latest-vote counts per region, then per current party.
    pub regions: BTreeMap<String, BTreeMap<PartyCode, u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub high_water: u64,
}

/// Region key for devices whose latest vote has none.
pub const UNKNOWN_REGION: &str = "unknown";

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/parties", get(parties))
        .route("/api/votes", post(submit_vote))
        .route("/api/votes/{device_id}/history", get(history))
        .route("/api/forecast", get(forecast))
        .route("/api/stats/regions", get(region_stats))
        .route("/api/healthz", get(healthz))
        .fallback(not_found)
        .with_state(state)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn parties(State(state): State<AppState>) -> Result<Json<PartiesResponse>, ApiError> {
    let registry = state.registry();
    let current = registry
        .current()
        .ok_or_else(|| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "no_election", "no current election"))?;
    let prior_election = registry.prior_election_id().map(str::to_owned);
    let prior_parties = match &prior_election {
        Some(id) => registry.parties_of(id).cloned().collect(),
        None => Vec::new(),
    };
    Ok(Json(PartiesResponse {
        election: current.id.clone(),
        house_size: current.house_size,
        threshold: current.threshold_fraction.clone(),
        parties: registry.parties_of(&current.id).cloned().collect(),
        prior_election,
        prior_parties,
        abstention_code: registry.abstention_code.clone(),
        groups: registry.fixed_groups.clone(),
    }))
}

async fn submit_vote(
    State(state): State<AppState>,
    body: Result<Json<VoteRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(request) = body.map_err(|e| ApiError::bad_request("bad_request", e.body_text()))?;
    let now = (state.inner.clock)();
    let line = LogLine {
        device_id: request.device_id,
        ts: Some(format_timestamp(&now)),
        party_2015: request.party_2015,
        party_2013: request.party_2013,
        region: request.region,
        ..LogLine::default()
    };
    let record = line.into_record(state.registry(), 0)?;
    if let Err(wait) = state.inner.limiter.check(record.device_id.as_str()) {
        let seconds = wait.as_secs().saturating_add(1).min(86_400);
        return Err(ApiError::new(
            StatusCode::TOO_MANY_REQUESTS,
            "rate_limited",
            "too many votes from this device",
        )
        .with_retry_after(seconds));
    }
    let store = Arc::clone(state.store());
    let stored = tokio::task::spawn_blocking(move || store.append_stamped(record, now))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let ack = VoteAck {
        seq: stored.seq,
        device_id: stored.device_id.to_string(),
        ts: format_timestamp(&stored.timestamp),
    };
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

async fn history(State(state): State<AppState>, Path(device_id): Path<String>) -> Json<HistoryResponse> {
    let registry = state.registry();
    let events = state
        .store()
        .snapshot()
        .history(&device_id)
        .iter()
        .map(|r| LogLine::from_record(r, &registry.abstention_code))
        .collect();
    Json(HistoryResponse { device_id, events })
}

#[derive(Debug, Deserialize)]
struct ForecastQuery {
    method: Option<String>,
    groups: Option<String>,
}

/// `method=raw|standardized|fixed` with `groups=AY,YH`, or `method=fixed:AY+YH`.
fn parse_method(query: &ForecastQuery) -> Result<Method, ApiError> {
    let name = query.method.as_deref().unwrap_or("raw");
    let method = match (name.split_once(':'), query.groups.as_deref()) {
        (Some(_), Some(_)) => {
            return Err(ApiError::bad_request(
                "bad_request",
                "give groups either in `method` or in `groups`, not both",
            ))
        }
        (Some(_), None) => name.parse()?,
        (None, groups) => Method::from_parts(name, groups)?,
    };
    if !matches!(method, Method::Fixed(_)) && query.groups.is_some() {
        return Err(ApiError::bad_request(
            "unexpected_groups",
            format!("method `{method}` takes no groups"),
        ));
    }
    Ok(method)
}

async fn forecast(
    State(state): State<AppState>,
    query: Result<Query<ForecastQuery>, QueryRejection>,
) -> Result<Json<ForecastResponse>, ApiError> {
    let Query(query) = query.map_err(|e| ApiError::bad_request("bad_request", e.body_text()))?;
    let method = parse_method(&query)?;
    let response = tokio::task::spawn_blocking(move || state.forecast(&method))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(ForecastResponse::clone(&response)))
}

async fn region_stats(State(state): State<AppState>) -> Json<RegionStats> {
    let snapshot = state.store().snapshot();
    let latest = snapshot.latest();
    let mut regions: BTreeMap<String, BTreeMap<PartyCode, u64>> = BTreeMap::new();
    for record in latest.values() {
        let region = record.region.clone().unwrap_or_else(|| UNKNOWN_REGION.to_owned());
        *regions
            .entry(region)
            .or_default()
            .entry(record.current_party.clone())
            .or_default() += 1;
    }
    Json(RegionStats {
        high_water: snapshot.high_water(),
        devices: latest.len(),
        regions,
    })
}

async fn healthz(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        high_water: state.store().high_water(),
    })
}
