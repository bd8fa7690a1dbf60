//! Web backend: upload an image for classification, poll the job, read the
//! transcript and hold follow-up chats about it.
//!
//! Jobs, uploads, transcripts and chat sessions live in one embedded redb file
//! under the data directory. Jobs run on a bounded pool of blocking workers;
//! jobs left `running` by a crash are queued again on start-up.

mod api;
mod config;
mod engine;
mod model;
mod store;

pub use api::{router, App};
pub use config::{DatasetSetup, ServiceConfig};
pub use engine::{Backends, Engine};
pub use model::{FollowUpSession, Job, JobResult, JobStatus};
pub use store::{Store, StoreError};

use std::sync::Arc;

/// Binds, prints the bound address to stdout and serves until the process ends.
pub async fn serve(config: ServiceConfig, backends: Backends) -> Result<(), String> {
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|e| format!("cannot listen on {}: {e}", config.listen))?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let app = App::open(config, backends).map_err(|e| e.to_string())?;
    let router = router(Arc::clone(&app));
    println!("listening on http://{addr}");
    axum::serve(listener, router).await.map_err(|e| e.to_string())
}
