//! HTTP/JSON service over design generation, live surveys and estimation,
//! persisted as one JSON file per object under a data directory.
//!
//! | Method | Path | Purpose |
//! |---|---|---|
//! | POST | `/designs` (`?async=true`) | generate a design from settings |
//! | GET | `/designs/{id}?view=coded\|labeled\|decoded` | fetch a design |
//! | POST | `/surveys` | create a survey on a stored design |
//! | GET | `/surveys/{id}` | survey summary |
//! | POST | `/surveys/{id}/sessions` | start a respondent session |
//! | GET | `/sessions/{sid}` | current set of a session |
//! | POST | `/sessions/{sid}/answers` | answer the current set |
//! | POST | `/surveys/{id}/close` | stop collecting |
//! | GET | `/surveys/{id}/responses` | responses as CSV |
//! | POST | `/estimations` | conditional logit fit |
//! | POST | `/wtp` | fit plus willingness to pay |
//! | GET | `/jobs/{id}` | status of background work |

mod error;
mod routes;
mod state;
mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use error::ApiError;
pub use routes::router;
pub use state::{AppState, Job, JobKind, JobStatus, StoredDesign, StoredSurvey};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub bind: SocketAddr,
}

/// A bound but not yet serving instance, so callers can learn the port
/// before requests arrive.
pub struct Server {
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
}

impl Server {
    /// Loads the data directory, resumes interrupted work and binds.
    pub async fn bind(config: &ServiceConfig) -> std::io::Result<Self> {
        let state = AppState::open(&config.data_dir)?;
        state.resume();
        let listener = tokio::net::TcpListener::bind(config.bind).await?;
        Ok(Self { listener, state })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until ctrl-c.
    pub async fn run(self) -> std::io::Result<()> {
        axum::serve(self.listener, router(self.state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    }
}
