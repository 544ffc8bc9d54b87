use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde_json::json;
use subtract_core::engine::persist::{load_tree, save_tree, tree_hash};
use subtract_core::engine::{
    branch as branch_at, frame_plan, run_from, write_frames, Backends, BranchAction, BranchDirective, BranchOptions,
    EngineConfig, ExportPreset, NodeId, Start, TrajectoryTree,
};
use subtract_core::planner::{EndpointConfig, PromptSet};
use subtract_core::{RasterImage, SceneSpec};
use subtract_service::BackendChoice;

use crate::{print_json, read_json, BackendArgs, BackendKind};

/// Engine settings saved next to the tree so later commands reuse them.
const CONFIG_FILE: &str = "config.json";

fn remote_parts(args: &BackendArgs) -> anyhow::Result<(EndpointConfig, PromptSet)> {
    let endpoint = match &args.endpoint {
        Some(p) => EndpointConfig::from_file(p)?,
        None => EndpointConfig::default(),
    }
    .with_env_overrides()?;
    let prompts = match &args.prompts {
        Some(dir) => PromptSet::from_dir(dir)?,
        None => PromptSet::builtin(),
    };
    Ok((endpoint, prompts))
}

fn backends(args: &BackendArgs, cfg: &EngineConfig) -> anyhow::Result<Backends> {
    Ok(match args.backend {
        BackendKind::Oracle => Backends::oracle(cfg),
        BackendKind::Remote => {
            let (endpoint, prompts) = remote_parts(args)?;
            Backends::http(endpoint, prompts, cfg)?
        }
    })
}

pub fn service_backend(args: &BackendArgs) -> anyhow::Result<BackendChoice> {
    Ok(match args.backend {
        BackendKind::Oracle => BackendChoice::Oracle,
        BackendKind::Remote => {
            let (endpoint, prompts) = remote_parts(args)?;
            BackendChoice::Remote { endpoint, prompts }
        }
    })
}

fn last_descendant(tree: &TrajectoryTree, mut node: NodeId) -> NodeId {
    while let Some(&c) = tree.nodes[node].children.first() {
        node = c;
    }
    node
}

#[derive(Args)]
pub struct SimplifyArgs {
    /// A scene JSON or an image PNG.
    #[arg(long)]
    input: PathBuf,
    /// Session directory; the tree is saved here after every step.
    #[arg(long)]
    out: PathBuf,
    /// Engine configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

pub fn simplify(args: SimplifyArgs) -> anyhow::Result<()> {
    let cfg: EngineConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => EngineConfig::default(),
    };
    cfg.validate()?;
    let is_json = args.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let start = if is_json {
        Start::Scene(SceneSpec::load(&args.input).with_context(|| args.input.display().to_string())?)
    } else {
        Start::Image(RasterImage::load_png(&args.input).with_context(|| args.input.display().to_string())?)
    };
    anyhow::ensure!(
        is_json || args.backend.backend != BackendKind::Oracle,
        "the oracle back-end needs a scene JSON; use --backend remote for images"
    );
    if args.out.join("tree.json").exists() {
        anyhow::bail!("{} already holds a session", args.out.display());
    }
    let backends = backends(&args.backend, &cfg)?;
    let mut tree = TrajectoryTree::new(start, &cfg)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join(CONFIG_FILE), serde_json::to_string_pretty(&cfg)?)?;
    save_tree(&tree, &args.out)?;
    let out = args.out.clone();
    let summary = run_from(&mut tree, 0, &backends, &cfg, &mut |t| save_tree(t, &out))?;
    save_tree(&tree, &args.out)?;
    let removed = tree.removed_on_path(summary.leaf)?;
    print_json(&json!({
        "session": args.out,
        "accepted": summary.accepted,
        "skipped": summary.skipped,
        "done": summary.done,
        "leaf": summary.leaf,
        "removed": removed,
        "main_path": tree.main_path,
        "tree_hash": tree_hash(&tree),
    }))
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    session: PathBuf,
    #[arg(long, default_value_t = 49)]
    total: usize,
    #[arg(long, default_value_t = 5)]
    repeat: usize,
    /// End of the exported path; the main-path leaf by default.
    #[arg(long)]
    node: Option<NodeId>,
    #[arg(long)]
    out: PathBuf,
}

pub fn export(args: ExportArgs) -> anyhow::Result<()> {
    let tree = load_tree(&args.session)?;
    let node = args.node.unwrap_or(*tree.main_path.last().expect("main path holds the root"));
    let preset = ExportPreset { repeat: args.repeat, total: args.total };
    let images = tree.path_images(node)?;
    let sources = frame_plan(images.len(), preset)?;
    let frames: Vec<RasterImage> = sources.iter().map(|&i| images[i].clone()).collect();
    let manifest = write_frames(&args.out, &frames, preset, sources)?;
    print_json(&json!({"node": node, "path_images": images.len(), "frames": manifest.files.len(), "out": args.out}))
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("action").required(true).args(["force_remove", "forbid"])))]
pub struct BranchArgs {
    #[arg(long)]
    session: PathBuf,
    #[arg(long)]
    node: NodeId,
    /// Remove this element first on the new branch.
    #[arg(long)]
    force_remove: Option<String>,
    /// Never remove this element on the new branch.
    #[arg(long)]
    forbid: Option<String>,
    /// Stop after the directive instead of running the loop on.
    #[arg(long)]
    no_resume: bool,
    /// Overrides the session's saved engine configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

fn session_config(dir: &Path, explicit: Option<&Path>) -> anyhow::Result<EngineConfig> {
    let saved = dir.join(CONFIG_FILE);
    let cfg = match explicit {
        Some(p) => read_json(p)?,
        None if saved.exists() => read_json(&saved)?,
        None => EngineConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn branch(args: BranchArgs) -> anyhow::Result<()> {
    let cfg = session_config(&args.session, args.config.as_deref())?;
    let mut tree = load_tree(&args.session)?;
    let action = match (args.force_remove, args.forbid) {
        (Some(id), None) => BranchAction::ForceRemove(id),
        (None, Some(id)) => BranchAction::Forbid(id),
        _ => unreachable!("clap enforces exactly one action"),
    };
    let backends = backends(&args.backend, &cfg)?;
    let directive = BranchDirective { node_id: args.node, action };
    let dir = args.session.clone();
    let root =
        branch_at(&mut tree, &directive, &backends, &cfg, BranchOptions { resume: !args.no_resume }, &mut |t| {
            save_tree(t, &dir)
        })?;
    save_tree(&tree, &args.session)?;
    let leaf = last_descendant(&tree, root);
    tracing::info!(root, leaf, "branch saved");
    print_json(&json!({
        "branch_root": root,
        "leaf": leaf,
        "removed": tree.removed_on_path(leaf)?,
        "nodes": tree.nodes.len(),
        "tree_hash": tree_hash(&tree),
    }))
}
