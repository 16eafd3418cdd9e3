//! HTTP service for the PILAR pipeline.
//!
//! Profiles, sessions, detection, recommendation and explanation live under
//! `/v1`. Every state change is an event appended to a JSON-lines log;
//! restarting the service replays the log.

pub mod api;
pub mod error;
pub mod persist;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use pilar_core::config::Config;
use pilar_core::engine::EngineError;
use pilar_core::{Engine, EngineBuilder};
use thiserror::Error;

pub use api::{router, AppState};
pub use persist::{EventLog, EventRecord, PersistError, Store};
pub use state::{Event, State};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// Opens the configured event log (or an in-memory store) and replays it.
pub fn open_state(engine: Arc<Engine>, config: &Config) -> Result<AppState, PersistError> {
    let store = match &config.service.log_path {
        Some(path) => {
            let (log, state, warnings) = EventLog::open(path, config.service.snapshot_every, &engine)?;
            tracing::info!(
                path = %path.display(),
                events = state.last_seq,
                sessions = state.sessions.len(),
                warnings = warnings.len(),
                "event log replayed"
            );
            Store { state, log }
        }
        None => Store::in_memory(),
    };
    Ok(AppState::new(engine, store))
}

/// Runs the service until Ctrl-C, then writes a final snapshot.
pub async fn serve(config: Config) -> Result<(), ServeError> {
    tracing::info!(config = ?config.redacted(), "starting");
    let engine = Arc::new(EngineBuilder::new(config.clone()).build()?);
    let state = open_state(engine, &config)?;
    let listener = tokio::net::TcpListener::bind(&config.service.bind)
        .await
        .map_err(|source| ServeError::Bind { addr: config.service.bind.clone(), source })?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await?;
    let mut store = state.store();
    let Store { state: s, log } = &mut *store;
    log.snapshot(s)?;
    Ok(())
}

/// A server running on its own runtime thread; stops when dropped.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    pub state: AppState,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    /// Binds `127.0.0.1` on an ephemeral port.
    pub fn start(state: AppState) -> std::io::Result<Self> {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = router(state.clone());
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self { addr, state, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
