//! Review service: serves scores and neighbor explanations for a loaded
//! dataset, records reviewer decisions in an append-only log, and rescores
//! the edited working copy on request.

pub mod api;
pub mod audit;
pub mod error;
pub mod session;

use std::path::Path;
use std::sync::Arc;

pub use api::{router, AppState};
pub use audit::{AuditLog, DecisionAction, LabelDecision};
pub use error::ServiceError;
pub use session::{replay_labels, DecisionRequest, ReviewSession, ScoreColumn};

/// Serves the API (and optionally a static UI directory) until ctrl-c.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    ui_dir: Option<&Path>,
) -> std::io::Result<()> {
    let app = router(state, ui_dir);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
