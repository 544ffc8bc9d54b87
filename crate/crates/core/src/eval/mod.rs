//! Removal-frame detection, order scoring, and rater analytics.

mod analytics;
mod detect;
mod order;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::level::SemanticLevel;
use crate::raster::{BinaryMask, RasterError, RasterImage};
use crate::scene::{visible_footprint, SceneError, SceneSpec};

pub use analytics::{
    aggregate_confusion, directional_confusion, pairwise_agreement, preference_table, Choice, Confusion, PairJudgment,
    PreferenceTable, RaterAgreement, RaterAnnotation,
};
pub use detect::{
    cumulative_mask, detect_from_diffs, detect_removal_frame, diff_masks, frame_diff_mask, DetectionParams,
    RemovalDetection,
};
pub use order::{kendall_tau_b, order_accuracy, OrderAccuracy};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("object mask must be neither empty nor the full frame")]
    DegenerateMask,
    #[error("no pair of objects with different levels; order accuracy is undefined")]
    NoCrossLevelPairs,
    #[error("rankings differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ranking is degenerate (fewer than two items or all tied)")]
    DegenerateRanking,
    #[error("raters share no annotated elements")]
    NoOverlap,
    #[error("rater {rater} annotated {element} more than once")]
    DuplicateAnnotation { rater: String, element: String },
    #[error("invalid detection parameters: {0}")]
    Params(String),
    #[error("ground truth: {0}")]
    GroundTruth(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub id: String,
    pub level: SemanticLevel,
    pub mask: BinaryMask,
}

/// On-disk ground truth entry; `mask` is a PNG path relative to the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub id: String,
    pub level: SemanticLevel,
    pub mask: String,
}

/// Reads a JSON list of [`GroundTruthEntry`].
pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthObject>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::GroundTruth(format!("{}: {e}", path.display())))?;
    let entries: Vec<GroundTruthEntry> =
        serde_json::from_str(&text).map_err(|e| EvalError::GroundTruth(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    entries
        .into_iter()
        .map(|e| Ok(GroundTruthObject { mask: BinaryMask::load_png(base.join(&e.mask))?, id: e.id, level: e.level }))
        .collect()
}

/// Every element of `scene` with its footprint as rendered.
pub fn ground_truth_from_scene(scene: &SceneSpec) -> Result<Vec<GroundTruthObject>, EvalError> {
    scene
        .elements
        .iter()
        .map(|e| Ok(GroundTruthObject { id: e.id.clone(), level: e.level, mask: visible_footprint(scene, &e.id)? }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub detections: Vec<RemovalDetection>,
    pub accuracy: OrderAccuracy,
}

/// Detects each object's removal frame in `frames`, then scores the order.
pub fn evaluate_sequence(
    frames: &[RasterImage],
    ground_truth: &[GroundTruthObject],
    params: &DetectionParams,
) -> Result<SequenceReport, EvalError> {
    params.validate()?;
    if ground_truth.is_empty() {
        return Err(EvalError::GroundTruth("no objects".into()));
    }
    let diffs = diff_masks(frames, params)?;
    let detections = ground_truth
        .iter()
        .map(|g| {
            Ok(RemovalDetection {
                id: g.id.clone(),
                level: g.level,
                t_star: detect_from_diffs(&diffs, &g.mask, params)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let accuracy = order_accuracy(&detections)?;
    Ok(SequenceReport { detections, accuracy })
}
