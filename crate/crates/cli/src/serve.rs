//! `pollcast serve --config poll.toml`
//!
//! ```toml
//! bind = "127.0.0.1:8080"
//! store_path = "votes.jsonl"
//! registry_path = "registry.json"     # optional, bundled registry otherwise
//! official_path = "official_2013.csv" # optional, needed for standardized forecasts
//!
//! [rate_limit]
//! enabled = true
//! burst = 10
//! per_minute = 6.0
//! ```
//!
//! Relative paths are taken from the config file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use pollcast_api::{router, AppState, RateLimitConfig, ServiceConfig};
use pollcast_store::VoteStore;
use serde::Deserialize;

use crate::{read_official, registry_or_default, Failure};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    pub store_path: PathBuf,
    pub registry_path: Option<PathBuf>,
    pub official_path: Option<PathBuf>,
    #[serde(default)]
    pub rate_limit: RateLimitConfig,
    pub small_class_floor: Option<u64>,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

pub fn load_config(path: &Path) -> Result<ServeConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let mut config: ServeConfig =
        toml::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rebase = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    rebase(&mut config.store_path);
    config.registry_path.as_mut().map(rebase);
    config.official_path.as_mut().map(rebase);
    Ok(config)
}

pub fn run(config_path: &Path) -> Result<(), Failure> {
    let config = load_config(config_path)?;
    let registry = Arc::new(registry_or_default(config.registry_path.as_deref())?);
    let official = config.official_path.as_deref().map(read_official).transpose()?;
    let store = VoteStore::open(&config.store_path, registry)
        .map_err(|e| Failure::input(format!("{}: {e}", config.store_path.display())))?;
    let store = Arc::new(store);
    let service = ServiceConfig {
        rate_limit: config.rate_limit,
        small_class_floor: config.small_class_floor,
    };
    let state = AppState::new(Arc::clone(&store), official, service).map_err(Failure::input)?;

    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::input(format!("runtime: {e}")))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.bind)
            .await
            .map_err(|e| Failure::input(format!("cannot bind {}: {e}", config.bind)))?;
        let addr = listener.local_addr().map_err(|e| Failure::input(e.to_string()))?;
        tracing::info!(%addr, events = store.high_water(), "serving");
        println!("listening on {addr}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(shutdown_signal())
            .await
            .map_err(|e| Failure::input(format!("server: {e}")))
    })?;

    store
        .sync()
        .map_err(|e| Failure::input(format!("flushing store: {e}")))?;
    tracing::info!("store flushed, exiting");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut signal) => {
                signal.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
