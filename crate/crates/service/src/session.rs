//! One simplification session: a trajectory tree on disk, the proposals
//! cached against its nodes, and a read snapshot that GETs serve without
//! touching the write lock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use subtract_core::engine::persist::{load_tree, save_tree, tree_hash, write_atomic};
use subtract_core::engine::{Backends, EngineConfig, EngineError, NodeId, Proposal, TrajectoryTree};
use tokio::sync::Mutex;

use crate::error::ApiError;

const META: &str = "session.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    Running,
    AwaitingDecision,
    Done,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Scene,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: String,
    pub source: SourceKind,
    pub created_unix: u64,
    pub config: EngineConfig,
}

#[derive(Debug, Clone)]
pub enum Slot {
    Pending,
    Ready(Arc<Proposal>),
    Done,
    Failed(ApiError),
}

#[derive(Debug, Clone)]
pub struct CachedProposal {
    pub id: String,
    pub node: NodeId,
    /// Children and skips of the node when the proposal was started.
    pub basis: (usize, usize),
    pub slot: Slot,
}

/// What readers see: the last persisted tree.
#[derive(Debug, Clone)]
pub struct View {
    pub tree: Arc<TrajectoryTree>,
    pub hash: String,
    pub status: SessionStatus,
    pub last_error: Option<String>,
}

pub struct Inner {
    pub tree: Arc<TrajectoryTree>,
    pub proposals: BTreeMap<String, CachedProposal>,
    /// Most recent proposal per node.
    pub latest: BTreeMap<NodeId, String>,
    pub running: usize,
    pub last_error: Option<String>,
}

pub struct Session {
    pub meta: SessionMeta,
    pub dir: PathBuf,
    pub backends: Backends,
    pub inner: Mutex<Inner>,
    view: RwLock<Arc<View>>,
}

pub fn basis(tree: &TrajectoryTree, node: NodeId) -> (usize, usize) {
    let n = &tree.nodes[node];
    (n.children.len(), n.skips.len())
}

fn status_of(inner: &Inner) -> SessionStatus {
    if inner.running > 0 {
        return SessionStatus::Running;
    }
    if inner.last_error.is_some() {
        return SessionStatus::Error;
    }
    let tree = &inner.tree;
    let fresh_ready = inner
        .latest
        .values()
        .filter_map(|pid| inner.proposals.get(pid))
        .any(|p| matches!(p.slot, Slot::Ready(_)) && basis(tree, p.node) == p.basis);
    if fresh_ready {
        return SessionStatus::AwaitingDecision;
    }
    let leaf = *tree.main_path.last().expect("main path holds the root");
    if tree.nodes[leaf].active_level.is_none() {
        SessionStatus::Done
    } else {
        SessionStatus::Idle
    }
}

impl Session {
    /// Writes the metadata and the root, then opens the session.
    pub fn create(meta: SessionMeta, dir: PathBuf, tree: TrajectoryTree, backends: Backends) -> Result<Self, ApiError> {
        std::fs::create_dir_all(&dir).map_err(|e| ApiError::internal(format!("{}: {e}", dir.display())))?;
        let text = serde_json::to_vec_pretty(&meta).map_err(|e| ApiError::internal(e.to_string()))?;
        write_atomic(&dir.join(META), &text)?;
        save_tree(&tree, &dir)?;
        Ok(Self::open(meta, dir, tree, backends))
    }

    pub fn load(
        dir: &Path,
        backends: impl FnOnce(&SessionMeta) -> Result<Backends, ApiError>,
    ) -> Result<Self, ApiError> {
        let text = std::fs::read(dir.join(META)).map_err(|e| ApiError::internal(format!("{}: {e}", dir.display())))?;
        let meta: SessionMeta = serde_json::from_slice(&text).map_err(|e| ApiError::internal(e.to_string()))?;
        let tree = load_tree(dir)?;
        let backends = backends(&meta)?;
        Ok(Self::open(meta, dir.to_path_buf(), tree, backends))
    }

    fn open(meta: SessionMeta, dir: PathBuf, tree: TrajectoryTree, backends: Backends) -> Self {
        let inner = Inner {
            tree: Arc::new(tree),
            proposals: BTreeMap::new(),
            latest: BTreeMap::new(),
            running: 0,
            last_error: None,
        };
        let view = Arc::new(View {
            hash: tree_hash(&inner.tree),
            tree: inner.tree.clone(),
            status: status_of(&inner),
            last_error: None,
        });
        Self { meta, dir, backends, inner: Mutex::new(inner), view: RwLock::new(view) }
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn view(&self) -> Arc<View> {
        self.view.read().expect("view lock poisoned").clone()
    }

    /// Republishes the snapshot after `inner` changed.
    pub fn refresh(&self, inner: &Inner) {
        let hash =
            if Arc::ptr_eq(&self.view().tree, &inner.tree) { self.view().hash.clone() } else { tree_hash(&inner.tree) };
        let view = Arc::new(View {
            tree: inner.tree.clone(),
            hash,
            status: status_of(inner),
            last_error: inner.last_error.clone(),
        });
        *self.view.write().expect("view lock poisoned") = view;
    }

    /// Applies `f` to a copy of the tree off the async runtime, persists the
    /// result, and only then installs it. On any error the tree is unchanged.
    pub async fn mutate<R: Send + 'static>(
        &self,
        inner: &mut Inner,
        f: impl FnOnce(&mut TrajectoryTree, &Backends, &EngineConfig) -> Result<R, EngineError> + Send + 'static,
    ) -> Result<R, ApiError> {
        let mut tree = (*inner.tree).clone();
        let backends = self.backends.clone();
        let cfg = self.meta.config.clone();
        let dir = self.dir.clone();
        let (tree, out) = tokio::task::spawn_blocking(move || -> Result<_, EngineError> {
            let out = f(&mut tree, &backends, &cfg)?;
            save_tree(&tree, &dir)?;
            Ok((tree, out))
        })
        .await??;
        inner.tree = Arc::new(tree);
        self.refresh(inner);
        Ok(out)
    }
}
