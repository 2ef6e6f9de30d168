//! Local HTTP and WebSocket front end to the fabco pipeline: demonstration
//! sessions with feasibility feedback, a serialized job queue for training
//! and evaluation, and paced rollout streaming.

pub mod api;
pub mod error;
pub mod jobs;
pub mod state;
pub mod store;

pub use api::router;
pub use error::{ApiError, ApiResult};
pub use state::{AppState, ServiceConfig};

/// Environment variable read for the bind address.
pub const BIND_ENV: &str = "FABCO_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8750";

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
