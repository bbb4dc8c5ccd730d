//! Local HTTP JSON API over the design engine.
//!
//! Datasets, models and exports are immutable once registered. Training runs
//! as a background job on a bounded worker pool; the other model endpoints
//! are short, deterministic computations run off the async executor.

mod error;
mod routes;
mod state;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use error::{ApiError, ApiResult};
pub use routes::router;
pub use state::{AppState, JobKind, JobState, JobStatus, ModelEntry};

/// Uploads larger than this are rejected.
pub const UPLOAD_LIMIT_BYTES: usize = 200 * 1024 * 1024;
pub const DATA_DIR_ENV: &str = "ELSPIN_DATA_DIR";
pub const PORT_ENV: &str = "ELSPIN_PORT";
pub const DEFAULT_PORT: u16 = 8750;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Loopback unless explicitly widened.
    pub addr: SocketAddr,
    /// Where bundles are saved and relative load paths resolve.
    pub data_dir: PathBuf,
    pub solubility: Option<PathBuf>,
    pub incompatibility: Option<PathBuf>,
    /// Concurrent background jobs.
    pub workers: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            addr: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            data_dir: PathBuf::from("."),
            solubility: None,
            incompatibility: None,
            workers: 2,
        }
    }
}

impl ServerConfig {
    /// Defaults overridden by `ELSPIN_DATA_DIR` and `ELSPIN_PORT`.
    pub fn from_env() -> Self {
        let mut c = ServerConfig::default();
        if let Ok(d) = std::env::var(DATA_DIR_ENV) {
            c.data_dir = PathBuf::from(d);
        }
        if let Some(p) = std::env::var(PORT_ENV).ok().and_then(|p| p.parse().ok()) {
            c.addr.set_port(p);
        }
        c
    }
}

/// Bind and serve until the process is stopped.
pub async fn serve(config: ServerConfig) -> std::io::Result<()> {
    std::fs::create_dir_all(&config.data_dir)?;
    let addr = config.addr;
    let state = AppState::new(config).map_err(std::io::Error::other)?;
    let app = router(Arc::new(state));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await
}
