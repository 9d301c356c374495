//! HTTP service for watch-history mirrors.
//!
//! Uploads start a background [`jobs`] entry that runs the pipeline from
//! `mirror-core`; finished datasets answer map, timeline, topic and layout
//! queries through the routes in [`api`].

pub mod api;
pub mod error;
pub mod jobs;
pub mod viewport;

use std::sync::Arc;
use std::time::Duration;

use mirror_core::config::{ApiKeys, MirrorConfig};
use mirror_core::http::{HttpClient, UreqClient};
use mirror_core::pipeline::Services;
use mirror_core::store::Store;

pub use api::{router, AppState, ServicesFactory};
pub use error::ApiError;

/// Timeout for outbound calls made by jobs and webhooks.
pub const HTTP_TIMEOUT: Duration = Duration::from_secs(30);

/// Services built from each dataset's config with live HTTP.
pub fn live_services(keys: ApiKeys, http: Arc<dyn HttpClient>) -> ServicesFactory {
    Arc::new(move |cfg| Services::from_config(cfg, &keys, http.clone()))
}

/// Serves the API on the configured address until Ctrl-C, resuming any
/// dataset left unfinished by an earlier run.
pub async fn serve(config: MirrorConfig, keys: ApiKeys) -> std::io::Result<()> {
    let store = Store::open(&config.server.data_dir).map_err(std::io::Error::other)?;
    let http: Arc<dyn HttpClient> = Arc::new(UreqClient::new(HTTP_TIMEOUT));
    let bind = config.server.bind.clone();
    let state = AppState::new(store, config, live_services(keys, http.clone()), Some(http));
    let resumed = state.resume_unfinished().map_err(std::io::Error::other)?;
    if !resumed.is_empty() {
        tracing::info!(count = resumed.len(), "resuming unfinished datasets");
    }
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
