//! The edit gate: scoring a (before, after) pair as a clean removal, and the
//! first-pass-wins candidate loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::raster::{BinaryMask, RasterError, RasterImage};

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("target mask is empty")]
    DegenerateMask,
    #[error("image smaller than one {patch}px cell ({width}x{height})")]
    TooSmall { width: u32, height: u32, patch: u32 },
    #[error("feature grid shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch { a: (usize, usize, usize), b: (usize, usize, usize) },
    #[error("no candidates to gate")]
    NoCandidates,
    #[error("at most {max} candidates per step, got {got}")]
    TooManyCandidates { max: usize, got: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("scorer failed: {0}")]
    Scorer(String),
}

/// Per-cell feature vectors laid out row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl FeatureGrid {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.grid_h, self.grid_w, self.dim)
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.grid_w + col) * self.dim;
        &self.values[start..start + self.dim]
    }
}

/// Cell descriptor length: three channel means, three channel standard
/// deviations, mean gradient magnitude.
pub const CELL_DIM: usize = 7;

/// Cells are `patch`-pixel squares; the last row and column absorb any
/// remainder so every pixel belongs to exactly one cell.
pub fn extract_patch_grid(image: &RasterImage, patch: u32) -> Result<FeatureGrid, VerifyError> {
    let (w, h) = image.dims();
    if patch == 0 || w < patch || h < patch {
        return Err(VerifyError::TooSmall { width: w, height: h, patch });
    }
    let (gw, gh) = ((w / patch) as usize, (h / patch) as usize);
    let bounds = |i: usize, n: usize, total: u32| {
        let lo = i as u32 * patch;
        let hi = if i + 1 == n { total } else { lo + patch };
        (lo, hi)
    };
    let mut values = Vec::with_capacity(gw * gh * CELL_DIM);
    for row in 0..gh {
        let (y0, y1) = bounds(row, gh, h);
        for col in 0..gw {
            let (x0, x1) = bounds(col, gw, w);
            values.extend_from_slice(&cell_descriptor(image, x0, x1, y0, y1));
        }
    }
    Ok(FeatureGrid { grid_h: gh, grid_w: gw, dim: CELL_DIM, values })
}

fn cell_descriptor(img: &RasterImage, x0: u32, x1: u32, y0: u32, y1: u32) -> [f32; CELL_DIM] {
    let n = ((x1 - x0) * (y1 - y0)) as f64;
    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut grad = 0.0f64;
    for y in y0..y1 {
        for x in x0..x1 {
            let p = img.get(x, y);
            for c in 0..3 {
                sum[c] += p[c] as f64;
                sq[c] += (p[c] as f64).powi(2);
            }
            // Differences stay inside the cell so cells are independent.
            let (xl, xr) = (x.saturating_sub(1).max(x0), (x + 1).min(x1 - 1));
            let (yu, yd) = (y.saturating_sub(1).max(y0), (y + 1).min(y1 - 1));
            let mut g = 0.0f32;
            for c in 0..3 {
                let dx = if xr > xl { (img.get(xr, y)[c] - img.get(xl, y)[c]) / (xr - xl) as f32 } else { 0.0 };
                let dy = if yd > yu { (img.get(x, yd)[c] - img.get(x, yu)[c]) / (yd - yu) as f32 } else { 0.0 };
                g = g.max((dx * dx + dy * dy).sqrt());
            }
            grad += g as f64;
        }
    }
    let mut out = [0.0f32; CELL_DIM];
    for c in 0..3 {
        let mean = sum[c] / n;
        out[c] = mean as f32;
        out[3 + c] = (sq[c] / n - mean * mean).max(0.0).sqrt() as f32;
    }
    out[6] = (grad / n) as f32;
    out
}

/// `[g_in; g_out; |g_in − g_out|]` per cell.
pub fn difference_volume(g_in: &FeatureGrid, g_out: &FeatureGrid) -> Result<FeatureGrid, VerifyError> {
    if g_in.shape() != g_out.shape() {
        return Err(VerifyError::ShapeMismatch { a: g_in.shape(), b: g_out.shape() });
    }
    let d = g_in.dim;
    let mut values = Vec::with_capacity(g_in.values.len() * 3);
    for (a, b) in g_in.values.chunks_exact(d).zip(g_out.values.chunks_exact(d)) {
        values.extend_from_slice(a);
        values.extend_from_slice(b);
        values.extend(a.iter().zip(b).map(|(x, y)| (x - y).abs()));
    }
    Ok(FeatureGrid { grid_h: g_in.grid_h, grid_w: g_in.grid_w, dim: 3 * d, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyResult {
    pub score: f64,
    pub pass: bool,
    pub threshold: f64,
    pub diagnostics: BTreeMap<String, f64>,
    /// Which failure term drove the score, when any penalty is non-zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominant: Option<String>,
    /// Where the target mask came from (`segmentation`, `change_mask`, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_source: Option<String>,
}

/// Anything that can judge a removal. Implementations must be stateless or
/// internally synchronized.
pub trait EditVerifier: Send + Sync {
    fn verify(
        &self,
        before: &RasterImage,
        after: &RasterImage,
        target_mask: &BinaryMask,
    ) -> Result<VerifyResult, VerifyError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicVerifier {
    pub threshold: f64,
    /// Per-pixel change (channel max) that counts as "changed".
    pub diff_threshold: f32,
    /// Ring around the target where changes are not held against the edit.
    pub dilation_radius: u32,
    /// Fraction of outside pixels whose change saturates the penalty.
    pub background_tolerance: f64,
}

impl Default for HeuristicVerifier {
    fn default() -> Self {
        Self { threshold: 0.5, diff_threshold: 0.10, dilation_radius: 8, background_tolerance: 0.05 }
    }
}

impl EditVerifier for HeuristicVerifier {
    fn verify(
        &self,
        before: &RasterImage,
        after: &RasterImage,
        target_mask: &BinaryMask,
    ) -> Result<VerifyResult, VerifyError> {
        heuristic_verify(before, after, target_mask, self)
    }
}

/// Scores how completely the target vanished and how little else moved.
pub fn heuristic_verify(
    before: &RasterImage,
    after: &RasterImage,
    target_mask: &BinaryMask,
    cfg: &HeuristicVerifier,
) -> Result<VerifyResult, VerifyError> {
    before.same_dims(after)?;
    if target_mask.dims() != before.dims() {
        return Err(RasterError::DimensionMismatch { a: before.dims(), b: target_mask.dims() }.into());
    }
    if target_mask.is_empty() {
        return Err(VerifyError::DegenerateMask);
    }
    let diff = before.channel_max_abs_diff(after);
    let changed = |i: usize| diff[i] >= cfg.diff_threshold;
    let target_area = target_mask.area();
    let unchanged_in_target = (0..diff.len()).filter(|&i| target_mask.get_index(i) && !changed(i)).count();
    let target_residual = unchanged_in_target as f64 / target_area as f64;

    let protected = target_mask.dilate(cfg.dilation_radius);
    let outside = protected.data().len() - protected.area();
    let changed_outside = (0..diff.len()).filter(|&i| !protected.get_index(i) && changed(i)).count();
    let background_change = if outside == 0 { 0.0 } else { changed_outside as f64 / outside as f64 };

    let background_raw = if cfg.background_tolerance > 0.0 {
        background_change / cfg.background_tolerance
    } else if background_change > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let background_penalty = background_raw.min(1.0);
    let score = (1.0 - target_residual.max(background_penalty)).clamp(0.0, 1.0);
    let dominant = if target_residual == 0.0 && background_raw == 0.0 {
        None
    } else if background_raw > target_residual {
        Some("background_change".to_string())
    } else {
        Some("target_residual".to_string())
    };
    let diagnostics = BTreeMap::from([
        ("target_residual".to_string(), target_residual),
        ("background_change".to_string(), background_change),
        ("background_penalty".to_string(), background_penalty),
        ("target_area".to_string(), target_area as f64),
    ]);
    Ok(VerifyResult {
        score,
        pass: score >= cfg.threshold,
        threshold: cfg.threshold,
        diagnostics,
        dominant,
        mask_source: None,
    })
}

pub const MAX_CANDIDATES: usize = 5;

/// Outcome of a gate: the first passing index, plus every result computed
/// on the way (never more than up to and including the accepted one).
#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    pub accepted: Option<usize>,
    pub results: Vec<VerifyResult>,
}

/// Scores candidates `0..count` in order through `score` and stops at the
/// first pass. Candidates may be produced lazily inside `score`.
pub fn gate_with<E>(count: usize, mut score: impl FnMut(usize) -> Result<VerifyResult, E>) -> Result<GateOutcome, E>
where
    E: From<VerifyError>,
{
    if count == 0 {
        return Err(VerifyError::NoCandidates.into());
    }
    if count > MAX_CANDIDATES {
        return Err(VerifyError::TooManyCandidates { max: MAX_CANDIDATES, got: count }.into());
    }
    let mut results = Vec::new();
    for i in 0..count {
        let r = score(i)?;
        let pass = r.pass;
        results.push(r);
        if pass {
            return Ok(GateOutcome { accepted: Some(i), results });
        }
    }
    Ok(GateOutcome { accepted: None, results })
}

pub fn gate_candidates(
    before: &RasterImage,
    candidates: &[RasterImage],
    target_mask: &BinaryMask,
    verifier: &dyn EditVerifier,
) -> Result<GateOutcome, VerifyError> {
    gate_with(candidates.len(), |i| verifier.verify(before, &candidates[i], target_mask))
}
