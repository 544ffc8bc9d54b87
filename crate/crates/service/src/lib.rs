//! HTTP API over simplification sessions.
//!
//! Every mutating request takes the session's write lock, runs engine work
//! on the blocking pool, persists the tree, and only then answers. Reads
//! are served from the last persisted snapshot.

mod error;
mod routes;
mod session;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use subtract_core::engine::{Backends, EngineConfig};
use subtract_core::planner::{EndpointConfig, PromptSet};

pub use error::ApiError;
pub use routes::router;
pub use session::{SessionMeta, SessionStatus, SourceKind};

use session::Session;

/// Builds the back-ends for a session from its engine configuration.
pub type BackendFactory = Arc<dyn Fn(&EngineConfig) -> Backends + Send + Sync>;

/// Which planner and editor new and reloaded sessions use.
#[derive(Clone)]
pub enum BackendChoice {
    Oracle,
    Remote {
        endpoint: EndpointConfig,
        prompts: PromptSet,
    },
    /// Anything else; image sources are accepted.
    Custom(BackendFactory),
}

impl std::fmt::Debug for BackendChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendChoice::Oracle => f.write_str("Oracle"),
            BackendChoice::Remote { endpoint, .. } => f.debug_struct("Remote").field("endpoint", endpoint).finish(),
            BackendChoice::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl BackendChoice {
    pub fn build(&self, cfg: &EngineConfig) -> Result<Backends, ApiError> {
        match self {
            BackendChoice::Oracle => Ok(Backends::oracle(cfg)),
            BackendChoice::Remote { endpoint, prompts } => Backends::http(endpoint.clone(), prompts.clone(), cfg)
                .map_err(|e| {
                    ApiError::new(axum::http::StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable", e.to_string())
                }),
            BackendChoice::Custom(make) => Ok(make(cfg)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub backend: BackendChoice,
    /// How long a propose request waits before answering 202.
    pub propose_timeout: Duration,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>, backend: BackendChoice) -> Self {
        Self { data_dir: data_dir.into(), backend, propose_timeout: Duration::from_secs(30) }
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
}

impl AppState {
    /// Opens every session found under the data directory.
    pub fn load(config: ServiceConfig) -> Result<Arc<Self>, ApiError> {
        let root = config.data_dir.join("sessions");
        std::fs::create_dir_all(&root).map_err(|e| ApiError::internal(format!("{}: {e}", root.display())))?;
        let mut sessions = BTreeMap::new();
        let entries = std::fs::read_dir(&root).map_err(|e| ApiError::internal(e.to_string()))?;
        for entry in entries.flatten() {
            let path = entry.path();
            if !path.is_dir() {
                continue;
            }
            match Session::load(&path, |meta| config.backend.build(&meta.config)) {
                Ok(s) => {
                    sessions.insert(s.id().to_string(), Arc::new(s));
                }
                Err(e) => tracing::warn!(dir = %path.display(), "skipping session: {e}"),
            }
        }
        tracing::info!(count = sessions.len(), "sessions loaded");
        Ok(Arc::new(Self { config, sessions: RwLock::new(sessions) }))
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    fn sessions(&self) -> Vec<Arc<Session>> {
        self.sessions.read().expect("session table poisoned").values().cloned().collect()
    }

    fn insert(&self, session: Session) -> Arc<Session> {
        let s = Arc::new(session);
        self.sessions.write().expect("session table poisoned").insert(s.id().to_string(), s.clone());
        s
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.config.data_dir.join("sessions").join(id)
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let state = AppState::load(config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}
