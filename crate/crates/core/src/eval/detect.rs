use serde::{Deserialize, Serialize};

use crate::level::SemanticLevel;
use crate::raster::{BinaryMask, RasterError, RasterImage};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionParams {
    pub tau_cov: f64,
    pub tau_act: f64,
    pub tau_stab: f64,
    /// Temporal half-window, frames.
    pub window: usize,
    /// Channel-max intensity change that counts as a difference.
    pub diff_threshold: f32,
    pub morph_radius: u32,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self { tau_cov: 0.4, tau_act: 0.4, tau_stab: 0.1, window: 2, diff_threshold: 0.05, morph_radius: 1 }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<(), EvalError> {
        for (name, v) in [("tau_cov", self.tau_cov), ("tau_act", self.tau_act), ("tau_stab", self.tau_stab)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(EvalError::Params(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.diff_threshold > 0.0) {
            return Err(EvalError::Params("diff_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// One object's detected removal frame, 1-based; `None` means never.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalDetection {
    pub id: String,
    pub level: SemanticLevel,
    pub t_star: Option<usize>,
}

/// `D_t` between consecutive frames.
pub fn frame_diff_mask(
    prev: &RasterImage,
    cur: &RasterImage,
    params: &DetectionParams,
) -> Result<BinaryMask, RasterError> {
    prev.same_dims(cur)?;
    let d = prev.channel_max_abs_diff(cur);
    Ok(BinaryMask::threshold(prev.width(), prev.height(), &d, params.diff_threshold).open(params.morph_radius))
}

/// Running unions `C_1..C_N`.
pub fn cumulative_mask(diffs: &[BinaryMask]) -> Result<Vec<BinaryMask>, RasterError> {
    let mut out: Vec<BinaryMask> = Vec::with_capacity(diffs.len());
    for d in diffs {
        let next = match out.last() {
            Some(prev) => {
                if prev.dims() != d.dims() {
                    return Err(RasterError::DimensionMismatch { a: prev.dims(), b: d.dims() });
                }
                prev.union(d)
            }
            None => d.clone(),
        };
        out.push(next);
    }
    Ok(out)
}

/// `D_1..D_N` for a clip; `D_1` is empty since the first frame has no
/// predecessor.
pub fn diff_masks(frames: &[RasterImage], params: &DetectionParams) -> Result<Vec<BinaryMask>, RasterError> {
    let Some(first) = frames.first() else { return Ok(Vec::new()) };
    let mut out = vec![BinaryMask::empty(first.width(), first.height())];
    for pair in frames.windows(2) {
        out.push(frame_diff_mask(&pair[0], &pair[1], params)?);
    }
    Ok(out)
}

/// Removal frame of `mask` given precomputed `D_t`.
pub fn detect_from_diffs(
    diffs: &[BinaryMask],
    mask: &BinaryMask,
    params: &DetectionParams,
) -> Result<Option<usize>, EvalError> {
    let area = mask.area();
    let total = mask.data().len();
    if area == 0 || area == total {
        return Err(EvalError::DegenerateMask);
    }
    if let Some(d) = diffs.iter().find(|d| d.dims() != mask.dims()) {
        return Err(RasterError::DimensionMismatch { a: mask.dims(), b: d.dims() }.into());
    }
    let outside = mask.complement();
    let cumulative = cumulative_mask(diffs)?;
    for (t, c) in cumulative.iter().enumerate() {
        if (c.intersection_area(mask) as f64) / (area as f64) < params.tau_cov {
            continue;
        }
        let lo = t.saturating_sub(params.window);
        let hi = (t + params.window).min(diffs.len() - 1);
        let mut local = diffs[lo].clone();
        for d in &diffs[lo + 1..=hi] {
            local.union_in_place(d);
        }
        let active = local.intersection_area(mask) as f64 / area as f64;
        let spill = local.intersection_area(&outside) as f64 / (total - area) as f64;
        if active >= params.tau_act && spill <= params.tau_stab {
            return Ok(Some(t + 1));
        }
    }
    Ok(None)
}

pub fn detect_removal_frame(
    frames: &[RasterImage],
    mask: &BinaryMask,
    params: &DetectionParams,
) -> Result<Option<usize>, EvalError> {
    detect_from_diffs(&diff_masks(frames, params)?, mask, params)
}
