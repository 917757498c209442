//! HTTP/JSON service for the debugging loop: register data, train, publish
//! feature clouds, collect judgements, apply disabling policies and compare
//! models. State is an append-only event log plus content-addressed
//! snapshot files under one data directory.

pub mod config;
pub mod error;
pub mod jobs;
pub mod log;
pub mod routes;
pub mod state;
pub mod workspace;

use std::net::SocketAddr;
use std::sync::Arc;

use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use config::ServiceConfig;
pub use error::ServiceError;
pub use state::{Event, WorkspaceState};
pub use workspace::Workspace;

#[derive(Clone)]
pub struct AppState {
    pub workspace: Arc<Workspace>,
    pub jobs: Arc<jobs::Jobs>,
}

/// A running server. Dropping it without [`Server::stop`] leaves the task
/// running until the runtime shuts down.
pub struct Server {
    pub addr: SocketAddr,
    pub state: AppState,
    shutdown: Option<oneshot::Sender<()>>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl Server {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting requests and waits for in-flight ones.
    pub async fn stop(mut self) -> Result<(), ServiceError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.handle
            .await
            .map_err(|e| ServiceError::Internal(e.to_string()))?
            .map_err(|e| ServiceError::Internal(e.to_string()))
    }

    /// Serves until the process is interrupted.
    pub async fn run_until_signal(self) -> Result<(), ServiceError> {
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutting down");
        self.stop().await
    }
}

/// Replays the workspace in `config.data_dir`, binds and starts serving.
pub async fn start(config: &ServiceConfig) -> Result<Server, ServiceError> {
    let dir = config.data_dir.clone();
    let workspace = tokio::task::spawn_blocking(move || Workspace::open(&dir))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    let state = AppState {
        workspace: Arc::new(workspace),
        jobs: Arc::new(jobs::Jobs::new(config.workers)),
    };
    let listener = tokio::net::TcpListener::bind((config.bind.as_str(), config.port))
        .await
        .map_err(|e| ServiceError::io(format!("bind {}:{}", config.bind, config.port), e))?;
    let addr = listener.local_addr().map_err(|e| ServiceError::io("local address", e))?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = routes::router(state.clone());
    let handle = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!("listening on http://{addr}");
    Ok(Server {
        addr,
        state,
        shutdown: Some(tx),
        handle,
    })
}
