use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::raster::RasterImage;

use super::{EngineError, NodeId, TrajectoryTree};

/// Frame repetition and clip length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportPreset {
    pub repeat: usize,
    pub total: usize,
}

impl Default for ExportPreset {
    fn default() -> Self {
        Self { repeat: 5, total: 49 }
    }
}

impl ExportPreset {
    /// Distinct images the preset shows.
    pub fn image_count(&self) -> Result<usize, EngineError> {
        if self.repeat == 0 || self.total == 0 {
            return Err(EngineError::Infeasible("repeat and total must be positive".into()));
        }
        Ok(self.total.div_ceil(self.repeat))
    }
}

/// Indices `round(i·n/t)` for `i = 0..=t`, halves rounded up.
pub fn subsample_indices(n: usize, t: usize) -> Vec<usize> {
    if t == 0 {
        return vec![0];
    }
    (0..=t).map(|i| (2 * i * n + t) / (2 * t)).collect()
}

/// `t + 1` items picked uniformly from `items`, first and last included.
pub fn subsample_trajectory<T: Clone>(items: &[T], t: usize) -> Vec<T> {
    if items.is_empty() {
        return Vec::new();
    }
    subsample_indices(items.len() - 1, t).into_iter().map(|i| items[i].clone()).collect()
}

/// Repeats each item `repeat` times and truncates the last run so exactly
/// `total` frames come out.
pub fn expand_to_frames<T: Clone>(steps: &[T], repeat: usize, total: usize) -> Result<Vec<T>, EngineError> {
    let count = steps.len();
    if repeat == 0 || count == 0 || total > repeat * count || total <= repeat * (count - 1) {
        return Err(EngineError::Infeasible(format!("{count} images at repeat {repeat} cannot make {total} frames")));
    }
    Ok(steps.iter().flat_map(|s| std::iter::repeat_n(s, repeat)).take(total).cloned().collect())
}

/// For each output frame, the index into a path of `path_len` images.
pub fn frame_plan(path_len: usize, preset: ExportPreset) -> Result<Vec<usize>, EngineError> {
    let count = preset.image_count()?;
    if path_len < count {
        return Err(EngineError::Infeasible(format!(
            "preset ({}, {}) needs {count} images, path has {path_len}",
            preset.repeat, preset.total
        )));
    }
    let picked = subsample_indices(path_len - 1, count - 1);
    let picked = if count == 1 { vec![0] } else { picked };
    expand_to_frames(&picked, preset.repeat, preset.total)
}

/// Frames for the path ending at `leaf`.
pub fn export_frames(
    tree: &TrajectoryTree,
    leaf: NodeId,
    preset: ExportPreset,
) -> Result<Vec<RasterImage>, EngineError> {
    let images = tree.path_images(leaf)?;
    Ok(frame_plan(images.len(), preset)?.into_iter().map(|i| images[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub preset: ExportPreset,
    /// Path position of each frame's image.
    pub sources: Vec<usize>,
    pub files: Vec<String>,
}

/// Writes `frame_0000.png`… and `manifest.json` under `dir`.
pub fn write_frames(
    dir: &Path,
    frames: &[RasterImage],
    preset: ExportPreset,
    sources: Vec<usize>,
) -> Result<FrameManifest, EngineError> {
    let io = |e: std::io::Error| EngineError::Persist(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut files = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let name = format!("frame_{i:04}.png");
        f.save_png(&dir.join(&name))?;
        files.push(name);
    }
    let manifest = FrameManifest { preset, sources, files };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| EngineError::Persist(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), text).map_err(io)?;
    Ok(manifest)
}
