//! Live online-testing sessions: durable per-session event logs, a
//! thread-safe session store and the HTTP API over it.

pub mod api;
pub mod error;
pub mod persist;
pub mod records;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::router;
pub use error::{ErrorBody, ServiceError};
pub use records::{Decision, HistoryView, LevelView, SessionView, SubmitRequest, WhatIfReport};
pub use store::{RestoreReport, SessionStore};

/// Serves `store` on an already bound listener until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    store: Arc<SessionStore>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(store)).with_graceful_shutdown(shutdown).await
}

/// Binds `addr`; port 0 picks a free port.
pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}
