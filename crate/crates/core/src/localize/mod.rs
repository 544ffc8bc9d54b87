//! Constrains a raw editor output to a local, color-consistent change of the
//! reference image: align, mask, match, blend.

mod blend;
pub mod features;
pub mod geometry;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::raster::{BinaryMask, RasterError, RasterImage};

pub use blend::{alpha_map, blend_edit, gradient_weighted_diff_mask, match_local_histogram, HistogramMatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizationParams {
    /// λ in `d / (1 + λ·g)`.
    pub gradient_weight: f32,
    pub diff_threshold: f32,
    pub morph_open_radius: u32,
    pub min_component_area: usize,
    pub feather_sigma: f32,
    pub dilation_radius: u32,
    pub min_inliers: usize,
    pub max_keypoints: usize,
    pub ransac_iterations: usize,
    /// Inlier reprojection threshold in pixels.
    pub ransac_threshold: f64,
    pub max_condition: f64,
    /// Transforms moving no image corner farther than this are treated as
    /// the identity.
    pub identity_snap_px: f64,
    pub seed: u64,
}

impl Default for LocalizationParams {
    fn default() -> Self {
        Self {
            gradient_weight: 10.0,
            diff_threshold: 0.10,
            morph_open_radius: 1,
            min_component_area: 16,
            feather_sigma: 2.0,
            dilation_radius: 5,
            min_inliers: 12,
            max_keypoints: 200,
            ransac_iterations: 1000,
            ransac_threshold: 1.5,
            max_condition: 1e6,
            identity_snap_px: 0.1,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamsError {
    #[error("{0} must be finite and non-negative")]
    Negative(&'static str),
    #[error("diff_threshold must lie in (0, 1), got {0}")]
    Threshold(f32),
}

impl LocalizationParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        for (name, v) in [
            ("gradient_weight", self.gradient_weight as f64),
            ("feather_sigma", self.feather_sigma as f64),
            ("ransac_threshold", self.ransac_threshold),
            ("max_condition", self.max_condition),
            ("identity_snap_px", self.identity_snap_px),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ParamsError::Negative(name));
            }
        }
        if !(self.diff_threshold > 0.0 && self.diff_threshold < 1.0) {
            return Err(ParamsError::Threshold(self.diff_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// Maps reference pixel coordinates to candidate pixel coordinates,
    /// row-major, bottom-right entry 1.
    pub transform: [[f64; 3]; 3],
    pub inlier_count: usize,
    pub inlier_ratio: f64,
    pub fallback_identity: bool,
    /// The projective estimate was ill-conditioned and an affine fit was used.
    #[serde(default)]
    pub affine: bool,
}

impl AlignmentResult {
    fn identity(inlier_count: usize, inlier_ratio: f64, fallback: bool) -> Self {
        Self { transform: IDENTITY, inlier_count, inlier_ratio, fallback_identity: fallback, affine: false }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let t = &self.transform;
        Matrix3::new(t[0][0], t[0][1], t[0][2], t[1][0], t[1][1], t[1][2], t[2][0], t[2][1], t[2][2])
    }

    pub fn is_identity(&self) -> bool {
        self.transform == IDENTITY
    }
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

/// Registers `candidate` onto `reference`. Falls back to the unwarped
/// candidate when too few consistent matches exist.
pub fn align_candidate(
    reference: &RasterImage,
    candidate: &RasterImage,
    params: &LocalizationParams,
) -> Result<(RasterImage, AlignmentResult), RasterError> {
    reference.same_dims(candidate)?;
    let ka = features::detect_keypoints(reference, params.max_keypoints);
    let kb = features::detect_keypoints(candidate, params.max_keypoints);
    let matches = features::match_keypoints(&ka, &kb);
    let fallback = |inliers: usize| {
        let ratio = if matches.is_empty() { 0.0 } else { inliers as f64 / matches.len() as f64 };
        (candidate.clone(), AlignmentResult::identity(inliers, ratio, true))
    };
    if matches.len() < params.min_inliers.max(4) {
        return Ok(fallback(0));
    }
    let src: Vec<_> = matches.iter().map(|&(i, _)| (ka[i].x, ka[i].y)).collect();
    let dst: Vec<_> = matches.iter().map(|&(_, j)| (kb[j].x, kb[j].y)).collect();
    let Some(fit) = geometry::ransac_homography(
        &src,
        &dst,
        params.ransac_iterations,
        params.ransac_threshold,
        params.max_condition,
        params.seed,
    ) else {
        return Ok(fallback(0));
    };
    let count = fit.inliers.len();
    if count < params.min_inliers {
        return Ok(fallback(count));
    }
    let ratio = count as f64 / matches.len() as f64;
    let (w, h) = reference.dims();
    if geometry::corner_displacement(&fit.transform, w, h) < params.identity_snap_px {
        return Ok((candidate.clone(), AlignmentResult::identity(count, ratio, false)));
    }
    let warped = geometry::warp_into(candidate, &fit.transform, reference);
    Ok((
        warped,
        AlignmentResult {
            transform: to_rows(&fit.transform),
            inlier_count: count,
            inlier_ratio: ratio,
            fallback_identity: false,
            affine: fit.affine,
        },
    ))
}

/// Result of [`localize_edit`].
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizedEdit {
    pub image: RasterImage,
    /// The mask that was blended in; empty for a no-op edit.
    pub change_mask: BinaryMask,
    pub alignment: AlignmentResult,
    pub annulus_empty: bool,
}

impl LocalizedEdit {
    pub fn is_noop(&self) -> bool {
        self.change_mask.is_empty()
    }
}

/// Align, mask, match and blend `candidate` against `reference`.
pub fn localize_edit(
    reference: &RasterImage,
    candidate: &RasterImage,
    params: &LocalizationParams,
) -> Result<LocalizedEdit, RasterError> {
    let (warped, alignment) = align_candidate(reference, candidate, params)?;
    let mask = gradient_weighted_diff_mask(reference, &warped, params);
    if mask.is_empty() {
        return Ok(LocalizedEdit { image: reference.clone(), change_mask: mask, alignment, annulus_empty: false });
    }
    let matched = match_local_histogram(reference, &warped, &mask, params.dilation_radius);
    let image = blend_edit(reference, &matched.image, &mask, params.feather_sigma);
    Ok(LocalizedEdit { image, change_mask: mask, alignment, annulus_empty: matched.annulus_empty })
}
