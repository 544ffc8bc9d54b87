//! The Select–Remove–Verify loop over the level taxonomy, the trajectory
//! tree it grows, branching, and frame export.

mod export;
pub mod persist;
mod run;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::level::SemanticLevel;
use crate::localize::LocalizationParams;
use crate::planner::{
    Editor, EndpointConfig, HttpTransport, OracleEditor, OraclePlanner, Planner, PlannerError, PromptSet, RemoteEditor,
    RemotePlanner, Transport, TransportError, VariationPolicy,
};
use crate::raster::{BinaryMask, RasterError, RasterImage};
use crate::scene::{composite_scene, SceneError, SceneSpec};
use crate::verify::{EditVerifier, HeuristicVerifier, VerifyError, VerifyResult};

pub use export::{
    expand_to_frames, export_frames, frame_plan, subsample_indices, subsample_trajectory, write_frames, ExportPreset,
    FrameManifest,
};
pub use run::{
    branch, commit_proposal, mark_done, propose, propose_forced, record_skip, run_from, run_simplification,
    BranchOptions, Proposal, ProposalOutcome, ProposeResult, RunSummary,
};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub max_candidates_per_step: usize,
    /// Accepted plus skipped steps per run.
    pub max_steps: usize,
    pub level_order: Vec<SemanticLevel>,
    pub edit_variation: VariationPolicy,
    pub localization: LocalizationParams,
    pub verifier_threshold: f64,
    pub t_train: usize,
    pub frame_repeat: usize,
    pub video_length: usize,
    /// Give skipped elements one more chance before a level is left.
    pub retry_skipped: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_candidates_per_step: crate::verify::MAX_CANDIDATES,
            max_steps: 64,
            level_order: SemanticLevel::ALL.to_vec(),
            edit_variation: VariationPolicy::default(),
            localization: LocalizationParams::default(),
            verifier_threshold: 0.5,
            t_train: 10,
            frame_repeat: 5,
            video_length: 49,
            retry_skipped: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_candidates_per_step == 0 || self.max_candidates_per_step > crate::verify::MAX_CANDIDATES {
            return Err(EngineError::Config(format!(
                "max_candidates_per_step must be in 1..={}",
                crate::verify::MAX_CANDIDATES
            )));
        }
        if self.level_order.is_empty() || self.level_order.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EngineError::Config("level_order must be strictly increasing and non-empty".into()));
        }
        self.localization.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.verifier_threshold) {
            return Err(EngineError::Config("verifier_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Level after `current` in `level_order`, or `None` when done.
    pub fn advance_level(&self, current: SemanticLevel) -> Option<SemanticLevel> {
        let pos = self.level_order.iter().position(|&l| l == current)?;
        self.level_order.get(pos + 1).copied()
    }

    pub fn first_level(&self) -> Option<SemanticLevel> {
        self.level_order.first().copied()
    }

    pub fn verifier(&self) -> HeuristicVerifier {
        HeuristicVerifier { threshold: self.verifier_threshold, ..Default::default() }
    }
}

/// Next level after `current` in the full taxonomy order.
pub fn advance_level(current: SemanticLevel) -> Option<SemanticLevel> {
    SemanticLevel::from_ordinal(current.ordinal() + 1)
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("infeasible export: {0}")]
    Infeasible(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("persistence: {0}")]
    Persist(String),
}

/// The three pluggable stages.
#[derive(Clone)]
pub struct Backends {
    pub planner: Arc<dyn Planner>,
    pub editor: Arc<dyn Editor>,
    pub verifier: Arc<dyn EditVerifier>,
}

impl Backends {
    pub fn oracle(cfg: &EngineConfig) -> Self {
        Self { planner: Arc::new(OraclePlanner), editor: Arc::new(OracleEditor), verifier: Arc::new(cfg.verifier()) }
    }

    /// Remote planner and editor over `transport`, heuristic verifier.
    pub fn remote(
        transport: Arc<dyn Transport>,
        endpoint: EndpointConfig,
        prompts: PromptSet,
        cfg: &EngineConfig,
    ) -> Self {
        Self {
            planner: Arc::new(RemotePlanner {
                transport: transport.clone(),
                config: endpoint.clone(),
                prompts: prompts.clone(),
            }),
            editor: Arc::new(RemoteEditor { transport, config: endpoint, prompts, policy: cfg.edit_variation }),
            verifier: Arc::new(cfg.verifier()),
        }
    }

    /// [`Backends::remote`] over HTTP.
    pub fn http(endpoint: EndpointConfig, prompts: PromptSet, cfg: &EngineConfig) -> Result<Self, TransportError> {
        let transport = Arc::new(HttpTransport::new(endpoint.clone())?);
        Ok(Self::remote(transport, endpoint, prompts, cfg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    Accepted,
    Skipped,
}

/// One removal attempt. Accepted steps are tree edges; skipped ones are
/// logged on the node they were attempted from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditStep {
    pub element_id: String,
    pub description: String,
    /// The active level when the step was taken.
    pub level: SemanticLevel,
    /// The element's own level, when the scene is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_level: Option<SemanticLevel>,
    pub before: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<NodeId>,
    pub status: StepStatus,
    pub candidate_attempts: usize,
    pub change_mask_area: usize,
    #[serde(default)]
    pub forced: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "element", rename_all = "snake_case")]
pub enum BranchAction {
    ForceRemove(String),
    Forbid(String),
    AcceptProposed,
    SkipProposed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchDirective {
    pub node_id: NodeId,
    #[serde(flatten)]
    pub action: BranchAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub image: RasterImage,
    pub change_mask: Option<BinaryMask>,
    pub incoming: Option<EditStep>,
    /// Level the next step from here is planned under; `None` once every
    /// level is exhausted.
    pub active_level: Option<SemanticLevel>,
    /// Elements excluded on this node's subtree.
    pub forbidden: BTreeSet<String>,
    pub skips: Vec<EditStep>,
    /// Set on branch roots.
    pub directive: Option<BranchDirective>,
}

/// Where a run starts.
#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    Scene(SceneSpec),
    Image(RasterImage),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTree {
    /// Source scene for oracle runs.
    pub scene: Option<SceneSpec>,
    pub nodes: Vec<TrajectoryNode>,
    pub main_path: Vec<NodeId>,
}

impl TrajectoryTree {
    pub fn new(start: Start, cfg: &EngineConfig) -> Result<Self, EngineError> {
        let (scene, image) = match start {
            Start::Scene(spec) => {
                let image = composite_scene(&spec)?;
                (Some(spec), image)
            }
            Start::Image(image) => (None, image.quantized()),
        };
        let root = TrajectoryNode {
            id: 0,
            parent: None,
            children: Vec::new(),
            image,
            change_mask: None,
            incoming: None,
            active_level: cfg.first_level(),
            forbidden: BTreeSet::new(),
            skips: Vec::new(),
            directive: None,
        };
        Ok(Self { scene, nodes: vec![root], main_path: vec![0] })
    }

    pub fn root(&self) -> &TrajectoryNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> Result<&TrajectoryNode, EngineError> {
        self.nodes.get(id).ok_or(EngineError::UnknownNode(id))
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Result<&mut TrajectoryNode, EngineError> {
        self.nodes.get_mut(id).ok_or(EngineError::UnknownNode(id))
    }

    /// Node ids from the root down to `id`.
    pub fn path_to(&self, id: NodeId) -> Result<Vec<NodeId>, EngineError> {
        let mut path = vec![id];
        let mut cur = self.node(id)?;
        while let Some(p) = cur.parent {
            path.push(p);
            cur = self.node(p)?;
        }
        path.reverse();
        Ok(path)
    }

    /// Accepted steps along the path to `id`, in order.
    pub fn steps_to(&self, id: NodeId) -> Result<Vec<&EditStep>, EngineError> {
        Ok(self.path_to(id)?.into_iter().filter_map(|n| self.nodes[n].incoming.as_ref()).collect())
    }

    /// Number of removals between the root and `id`.
    pub fn depth(&self, id: NodeId) -> Result<usize, EngineError> {
        Ok(self.steps_to(id)?.len())
    }

    pub fn removed_on_path(&self, id: NodeId) -> Result<Vec<String>, EngineError> {
        Ok(self.steps_to(id)?.into_iter().map(|s| s.element_id.clone()).collect())
    }

    /// Forbidden on the path to `id`.
    pub fn forbidden_at(&self, id: NodeId) -> Result<BTreeSet<String>, EngineError> {
        let mut out = BTreeSet::new();
        for n in self.path_to(id)? {
            out.extend(self.nodes[n].forbidden.iter().cloned());
        }
        Ok(out)
    }

    /// Skipped steps logged anywhere on the path to `id`.
    pub fn skips_to(&self, id: NodeId) -> Result<Vec<&EditStep>, EngineError> {
        Ok(self.path_to(id)?.into_iter().flat_map(|n| self.nodes[n].skips.iter()).collect())
    }

    /// The scene as it stands at `id` (oracle runs only).
    pub fn scene_at(&self, id: NodeId) -> Result<Option<SceneSpec>, EngineError> {
        let Some(scene) = &self.scene else { return Ok(None) };
        let removed: BTreeSet<String> = self.removed_on_path(id)?.into_iter().collect();
        let mut current = scene.clone();
        current.elements.retain(|e| !removed.contains(&e.id));
        Ok(Some(current))
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.children.is_empty()).map(|n| n.id).collect()
    }

    /// Images along the main path.
    pub fn main_path_images(&self) -> Vec<&RasterImage> {
        self.main_path.iter().map(|&n| &self.nodes[n].image).collect()
    }

    /// Images along the path to `id`, skipping copy nodes that repeat their
    /// parent's image.
    pub fn path_images(&self, id: NodeId) -> Result<Vec<&RasterImage>, EngineError> {
        Ok(self
            .path_to(id)?
            .into_iter()
            .filter(|&n| n == 0 || self.nodes[n].incoming.is_some())
            .map(|n| &self.nodes[n].image)
            .collect())
    }

    pub(crate) fn add_child(&mut self, parent: NodeId, mut node: TrajectoryNode) -> NodeId {
        let id = self.nodes.len();
        node.id = id;
        node.parent = Some(parent);
        self.nodes.push(node);
        self.nodes[parent].children.push(id);
        if self.main_path.last() == Some(&parent) {
            self.main_path.push(id);
        }
        id
    }
}
