//! Session directories: `tree.json` plus one PNG per node image and change
//! mask. Node files are written once and never rewritten; `tree.json` is
//! replaced atomically last, so a crash leaves the previous tree loadable.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::level::SemanticLevel;
use crate::raster::{BinaryMask, RasterImage};
use crate::scene::SceneSpec;

use super::{BranchDirective, EditStep, EngineError, NodeId, TrajectoryNode, TrajectoryTree};

const MANIFEST: &str = "tree.json";
const SCENE: &str = "scene.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incoming: Option<EditStep>,
    pub active_level: Option<SemanticLevel>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub forbidden: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skips: Vec<EditStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directive: Option<BranchDirective>,
}

/// The `tree.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeManifest {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    pub main_path: Vec<NodeId>,
    pub nodes: Vec<NodeRecord>,
}

fn image_path(id: NodeId) -> String {
    format!("nodes/{id}.png")
}

fn mask_path(id: NodeId) -> String {
    format!("masks/{id}.png")
}

pub fn manifest(tree: &TrajectoryTree) -> TreeManifest {
    TreeManifest {
        version: FORMAT_VERSION,
        scene: tree.scene.as_ref().map(|_| SCENE.to_string()),
        main_path: tree.main_path.clone(),
        nodes: tree
            .nodes
            .iter()
            .map(|n| NodeRecord {
                id: n.id,
                parent: n.parent,
                children: n.children.clone(),
                image: image_path(n.id),
                mask: n.change_mask.as_ref().map(|_| mask_path(n.id)),
                incoming: n.incoming.clone(),
                active_level: n.active_level,
                forbidden: n.forbidden.clone(),
                skips: n.skips.clone(),
                directive: n.directive.clone(),
            })
            .collect(),
    }
}

fn persist_err(path: &Path, e: impl std::fmt::Display) -> EngineError {
    EngineError::Persist(format!("{}: {e}", path.display()))
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), EngineError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| persist_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| persist_err(path, e))
}

/// Brings `dir` up to date with `tree`.
pub fn save_tree(tree: &TrajectoryTree, dir: &Path) -> Result<(), EngineError> {
    for sub in ["nodes", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| persist_err(&p, e))?;
    }
    if let Some(scene) = &tree.scene {
        let p = dir.join(SCENE);
        if !p.exists() {
            write_atomic(&p, scene.to_json()?.as_bytes())?;
        }
    }
    for n in &tree.nodes {
        let p = dir.join(image_path(n.id));
        if !p.exists() {
            write_atomic(&p, &n.image.encode_png())?;
        }
        if let Some(m) = &n.change_mask {
            let p = dir.join(mask_path(n.id));
            if !p.exists() {
                write_atomic(&p, &m.encode_png())?;
            }
        }
    }
    let text = serde_json::to_string_pretty(&manifest(tree)).map_err(|e| persist_err(dir, e))?;
    write_atomic(&dir.join(MANIFEST), text.as_bytes())
}

pub fn load_tree(dir: &Path) -> Result<TrajectoryTree, EngineError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| persist_err(&path, e))?;
    let m: TreeManifest = serde_json::from_str(&text).map_err(|e| persist_err(&path, e))?;
    if m.version != FORMAT_VERSION {
        return Err(persist_err(&path, format!("unsupported version {}", m.version)));
    }
    let scene = match &m.scene {
        Some(rel) => Some(SceneSpec::load(dir.join(rel))?),
        None => None,
    };
    let mut nodes = Vec::with_capacity(m.nodes.len());
    for (i, r) in m.nodes.into_iter().enumerate() {
        if r.id != i || r.parent.is_some_and(|p| p >= i) || r.children.iter().any(|&c| c <= i) {
            return Err(persist_err(&path, format!("malformed node {}", r.id)));
        }
        let image = RasterImage::load_png(dir.join(&r.image))?;
        let change_mask = match &r.mask {
            Some(rel) => Some(BinaryMask::load_png(dir.join(rel))?),
            None => None,
        };
        nodes.push(TrajectoryNode {
            id: r.id,
            parent: r.parent,
            children: r.children,
            image,
            change_mask,
            incoming: r.incoming,
            active_level: r.active_level,
            forbidden: r.forbidden,
            skips: r.skips,
            directive: r.directive,
        });
    }
    if nodes.is_empty() || m.main_path.iter().any(|&n| n >= nodes.len()) {
        return Err(persist_err(&path, "empty tree or dangling main path"));
    }
    Ok(TrajectoryTree { scene, nodes, main_path: m.main_path })
}

/// SHA-256 over the manifest and every node's pixels and mask.
pub fn tree_hash(tree: &TrajectoryTree) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&manifest(tree)).unwrap_or_default());
    if let Some(scene) = &tree.scene {
        h.update(scene.to_json().unwrap_or_default());
    }
    for n in &tree.nodes {
        h.update(n.image.content_hash());
        if let Some(m) = &n.change_mask {
            h.update(m.encode_png());
        }
    }
    hex::encode(h.finalize())
}
