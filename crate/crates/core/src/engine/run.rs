use std::collections::{BTreeMap, BTreeSet};

use crate::level::SemanticLevel;
use crate::localize::localize_edit;
use crate::planner::{oracle_selection, EditRequest, PlanOutcome, PlanRequest, Selection};
use crate::raster::{BinaryMask, RasterImage};
use crate::scene::SceneSpec;
use crate::verify::{gate_with, VerifyError, VerifyResult};

use super::{
    Backends, BranchAction, BranchDirective, EditStep, EngineConfig, EngineError, NodeId, Start, StepStatus,
    TrajectoryNode, TrajectoryTree,
};

/// A removal computed at a node but not yet committed.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub node: NodeId,
    pub level: SemanticLevel,
    pub selection: Selection,
    pub element_level: Option<SemanticLevel>,
    pub forced: bool,
    pub outcome: ProposalOutcome,
    /// Snapshot of the node's children and skips; a commit against a node
    /// that moved on since is stale.
    pub(crate) stamp: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProposalOutcome {
    Passed { attempts: usize, image: RasterImage, change_mask: BinaryMask, verify: VerifyResult },
    Failed { attempts: usize, results: Vec<VerifyResult> },
}

impl ProposalOutcome {
    pub fn attempts(&self) -> usize {
        match self {
            ProposalOutcome::Passed { attempts, .. } | ProposalOutcome::Failed { attempts, .. } => *attempts,
        }
    }

    pub fn passed(&self) -> bool {
        matches!(self, ProposalOutcome::Passed { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProposeResult {
    Proposal(Box<Proposal>),
    /// Every level is exhausted at this node.
    Done,
}

fn stamp(node: &TrajectoryNode) -> (usize, usize) {
    (node.children.len(), node.skips.len())
}

/// Elements the planner must not offer at `node`: forbidden, removed, and
/// skipped (unless a retry pass is allowed for `level`).
fn excluded_at(
    tree: &TrajectoryTree,
    node: NodeId,
    level: SemanticLevel,
    retry: bool,
) -> Result<BTreeSet<String>, EngineError> {
    let mut out = tree.forbidden_at(node)?;
    out.extend(tree.removed_on_path(node)?);
    let mut skip_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in tree.skips_to(node)? {
        *skip_counts.entry(s.element_id.as_str()).or_default() += 1;
    }
    for (id, n) in skip_counts {
        let second_chance =
            retry && n == 1 && tree.skips_to(node)?.iter().any(|s| s.element_id == id && s.level == level);
        if !second_chance {
            out.insert(id.to_string());
        }
    }
    Ok(out)
}

fn failed_result(reason: &str, cfg: &EngineConfig) -> VerifyResult {
    VerifyResult {
        score: 0.0,
        pass: false,
        threshold: cfg.verifier_threshold,
        diagnostics: BTreeMap::from([(reason.to_string(), 1.0)]),
        dominant: Some(reason.to_string()),
        mask_source: None,
    }
}

/// Generates, localizes and gates up to `max_candidates_per_step` edits,
/// lazily and in order.
fn attempt_removal(
    image: &RasterImage,
    scene: Option<&SceneSpec>,
    selection: &Selection,
    backends: &Backends,
    cfg: &EngineConfig,
) -> Result<ProposalOutcome, EngineError> {
    let mut produced: Vec<(RasterImage, BinaryMask)> = Vec::new();
    let outcome = gate_with(cfg.max_candidates_per_step, |attempt| -> Result<VerifyResult, EngineError> {
        let raw = backends.editor.edit(&EditRequest { image, scene, selection, attempt })?;
        let raw = if raw.dims() == image.dims() { raw } else { raw.resized(image.width(), image.height())? };
        let edit = localize_edit(image, &raw, &cfg.localization)?;
        let after = edit.image.quantized();
        let (target, source) = match &selection.target_mask {
            Some(m) => (m.clone(), "segmentation"),
            None => (edit.change_mask.clone(), "change_mask"),
        };
        let result = if edit.change_mask.is_empty() {
            failed_result("empty_change_mask", cfg)
        } else {
            match backends.verifier.verify(image, &after, &target) {
                Ok(mut r) => {
                    r.mask_source = Some(source.to_string());
                    r
                }
                Err(VerifyError::DegenerateMask) => failed_result("degenerate_target_mask", cfg),
                Err(e) => return Err(e.into()),
            }
        };
        produced.push((after, edit.change_mask));
        Ok(result)
    })?;
    let attempts = outcome.results.len();
    Ok(match outcome.accepted {
        Some(i) => {
            let (image, change_mask) = produced.swap_remove(i);
            ProposalOutcome::Passed { attempts, image, change_mask, verify: outcome.results[i].clone() }
        }
        None => ProposalOutcome::Failed { attempts, results: outcome.results },
    })
}

/// Plans at `node`, advancing through exhausted levels, and runs the gated
/// removal. Does not modify the tree.
pub fn propose(
    tree: &TrajectoryTree,
    node: NodeId,
    backends: &Backends,
    cfg: &EngineConfig,
) -> Result<ProposeResult, EngineError> {
    let n = tree.node(node)?;
    let Some(mut level) = n.active_level else { return Ok(ProposeResult::Done) };
    let scene = tree.scene_at(node)?;
    loop {
        let excluded = excluded_at(tree, node, level, cfg.retry_skipped)?;
        let request = PlanRequest { image: &n.image, scene: scene.as_ref(), level, excluded: &excluded };
        match backends.planner.plan(&request)? {
            PlanOutcome::LevelExhausted => match cfg.advance_level(level) {
                Some(next) => level = next,
                None => return Ok(ProposeResult::Done),
            },
            PlanOutcome::Selected(selection) => {
                let element_level = scene.as_ref().and_then(|s| s.element(&selection.element_id)).map(|e| e.level);
                let outcome = attempt_removal(&n.image, scene.as_ref(), &selection, backends, cfg)?;
                return Ok(ProposeResult::Proposal(Box::new(Proposal {
                    node,
                    level,
                    selection,
                    element_level,
                    forced: false,
                    outcome,
                    stamp: stamp(n),
                })));
            }
        }
    }
}

/// Removal of a user-chosen element at `node`, bypassing the planner but
/// not the gate.
pub fn propose_forced(
    tree: &TrajectoryTree,
    node: NodeId,
    element: &str,
    backends: &Backends,
    cfg: &EngineConfig,
) -> Result<Proposal, EngineError> {
    let n = tree.node(node)?;
    if tree.forbidden_at(node)?.contains(element) {
        return Err(EngineError::Conflict(format!("{element} is forbidden on this branch")));
    }
    if tree.removed_on_path(node)?.iter().any(|r| r == element) {
        return Err(EngineError::Conflict(format!("{element} was already removed on this path")));
    }
    let scene = tree.scene_at(node)?;
    let selection = match &scene {
        Some(s) => {
            oracle_selection(s, element).map_err(|_| EngineError::Conflict(format!("{element} is not in the scene")))?
        }
        None => Selection {
            element_id: element.to_string(),
            name: element.to_string(),
            description: element.to_string(),
            target_mask: None,
        },
    };
    let element_level = scene.as_ref().and_then(|s| s.element(element)).map(|e| e.level);
    // Forced steps are logged under the current level so levels stay monotone.
    let level = n
        .active_level
        .or_else(|| cfg.level_order.last().copied())
        .ok_or_else(|| EngineError::Config("empty level order".into()))?;
    let outcome = attempt_removal(&n.image, scene.as_ref(), &selection, backends, cfg)?;
    Ok(Proposal { node, level, selection, element_level, forced: true, outcome, stamp: stamp(n) })
}

fn check_fresh(tree: &TrajectoryTree, proposal: &Proposal) -> Result<(), EngineError> {
    if stamp(tree.node(proposal.node)?) != proposal.stamp {
        return Err(EngineError::Conflict("proposal is stale; the node has changed since".into()));
    }
    Ok(())
}

fn step_for(proposal: &Proposal, status: StepStatus, after: Option<NodeId>) -> EditStep {
    let (area, verify) = match &proposal.outcome {
        ProposalOutcome::Passed { change_mask, verify, .. } => (change_mask.area(), Some(verify.clone())),
        ProposalOutcome::Failed { results, .. } => (0, results.last().cloned()),
    };
    EditStep {
        element_id: proposal.selection.element_id.clone(),
        description: proposal.selection.description.clone(),
        level: proposal.level,
        element_level: proposal.element_level,
        before: proposal.node,
        after,
        status,
        candidate_attempts: proposal.outcome.attempts(),
        change_mask_area: area,
        forced: proposal.forced,
        verify,
    }
}

/// Commits a passing proposal as a new child node.
pub fn commit_proposal(tree: &mut TrajectoryTree, proposal: &Proposal) -> Result<NodeId, EngineError> {
    check_fresh(tree, proposal)?;
    let ProposalOutcome::Passed { image, change_mask, .. } = &proposal.outcome else {
        return Err(EngineError::Conflict("proposal did not pass verification".into()));
    };
    let child = TrajectoryNode {
        id: 0,
        parent: None,
        children: Vec::new(),
        image: image.clone(),
        change_mask: Some(change_mask.clone()),
        incoming: None,
        active_level: Some(proposal.level),
        forbidden: BTreeSet::new(),
        skips: Vec::new(),
        directive: None,
    };
    let id = tree.add_child(proposal.node, child);
    tree.nodes[id].incoming = Some(step_for(proposal, StepStatus::Accepted, Some(id)));
    let parent = tree.node_mut(proposal.node)?;
    if !proposal.forced {
        parent.active_level = Some(proposal.level);
    }
    Ok(id)
}

/// Logs the proposal's element as skipped at its node.
pub fn record_skip(tree: &mut TrajectoryTree, proposal: &Proposal) -> Result<(), EngineError> {
    check_fresh(tree, proposal)?;
    let step = step_for(proposal, StepStatus::Skipped, None);
    let node = tree.node_mut(proposal.node)?;
    if !proposal.forced {
        node.active_level = Some(proposal.level);
    }
    node.skips.push(step);
    Ok(())
}

pub fn mark_done(tree: &mut TrajectoryTree, node: NodeId) -> Result<(), EngineError> {
    tree.node_mut(node)?.active_level = None;
    Ok(())
}

/// Counts of what a run did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub accepted: usize,
    pub skipped: usize,
    pub leaf: NodeId,
    pub done: bool,
}

/// Runs the loop from `start` until every level is exhausted or
/// `max_steps` steps were taken. `on_step` sees the tree after every
/// committed change; on error the tree keeps everything done so far.
pub fn run_from(
    tree: &mut TrajectoryTree,
    start: NodeId,
    backends: &Backends,
    cfg: &EngineConfig,
    on_step: &mut dyn FnMut(&TrajectoryTree) -> Result<(), EngineError>,
) -> Result<RunSummary, EngineError> {
    let mut summary = RunSummary { leaf: start, ..Default::default() };
    while summary.accepted + summary.skipped < cfg.max_steps {
        match propose(tree, summary.leaf, backends, cfg)? {
            ProposeResult::Done => {
                mark_done(tree, summary.leaf)?;
                summary.done = true;
                on_step(tree)?;
                break;
            }
            ProposeResult::Proposal(p) if p.outcome.passed() => {
                summary.leaf = commit_proposal(tree, &p)?;
                summary.accepted += 1;
                tracing::info!(element = %p.selection.element_id, level = %p.level, node = summary.leaf, "removed");
            }
            ProposeResult::Proposal(p) => {
                record_skip(tree, &p)?;
                summary.skipped += 1;
                tracing::info!(element = %p.selection.element_id, level = %p.level, "skipped");
            }
        }
        on_step(tree)?;
    }
    Ok(summary)
}

/// Builds a tree from `start` and runs the loop to completion.
pub fn run_simplification(
    start: Start,
    backends: &Backends,
    cfg: &EngineConfig,
) -> Result<TrajectoryTree, EngineError> {
    cfg.validate()?;
    let mut tree = TrajectoryTree::new(start, cfg)?;
    run_from(&mut tree, 0, backends, cfg, &mut |_| Ok(()))?;
    Ok(tree)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchOptions {
    /// Continue the loop after the directive's first action.
    pub resume: bool,
}

impl Default for BranchOptions {
    fn default() -> Self {
        Self { resume: true }
    }
}

/// Opens a branch at `directive.node_id`: a copy of that node carrying the
/// directive, then the directive's first action, then (optionally) the rest
/// of the loop. Existing nodes are never altered. Returns the branch root.
pub fn branch(
    tree: &mut TrajectoryTree,
    directive: &BranchDirective,
    backends: &Backends,
    cfg: &EngineConfig,
    opts: BranchOptions,
    on_step: &mut dyn FnMut(&TrajectoryTree) -> Result<(), EngineError>,
) -> Result<NodeId, EngineError> {
    let base = tree.node(directive.node_id)?.clone();
    match &directive.action {
        BranchAction::ForceRemove(id) => {
            if tree.forbidden_at(base.id)?.contains(id) {
                return Err(EngineError::Conflict(format!("{id} is forbidden on this branch")));
            }
        }
        BranchAction::Forbid(id) => {
            if tree.removed_on_path(base.id)?.contains(id) {
                return Err(EngineError::Conflict(format!("{id} was already removed on this path")));
            }
        }
        _ => {}
    }
    let copy = TrajectoryNode {
        id: 0,
        parent: None,
        children: Vec::new(),
        image: base.image.clone(),
        change_mask: None,
        incoming: None,
        active_level: base.active_level,
        forbidden: match &directive.action {
            BranchAction::Forbid(id) => BTreeSet::from([id.clone()]),
            _ => BTreeSet::new(),
        },
        skips: Vec::new(),
        directive: Some(directive.clone()),
    };
    // Branches never extend the main path.
    let main = tree.main_path.clone();
    let root = tree.add_child(base.id, copy);
    tree.main_path = main;
    let mut leaf = root;
    let mut steps = 0;
    match &directive.action {
        BranchAction::ForceRemove(id) => {
            let p = propose_forced(tree, root, id, backends, cfg)?;
            if p.outcome.passed() {
                leaf = commit_proposal(tree, &p)?;
            } else {
                record_skip(tree, &p)?;
            }
            steps += 1;
        }
        BranchAction::AcceptProposed | BranchAction::SkipProposed => match propose(tree, root, backends, cfg)? {
            ProposeResult::Done => mark_done(tree, root)?,
            ProposeResult::Proposal(p) => {
                if directive.action == BranchAction::AcceptProposed && p.outcome.passed() {
                    leaf = commit_proposal(tree, &p)?;
                } else {
                    record_skip(tree, &p)?;
                }
                steps += 1;
            }
        },
        BranchAction::Forbid(_) => {}
    }
    on_step(tree)?;
    if opts.resume && steps < cfg.max_steps {
        let rest = EngineConfig { max_steps: cfg.max_steps - steps, ..cfg.clone() };
        run_from(tree, leaf, backends, &rest, on_step)?;
    }
    Ok(root)
}
