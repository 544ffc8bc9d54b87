//! Ground-truth back-ends over a [`SceneSpec`].

use std::collections::BTreeSet;

use crate::level::SemanticLevel;
use crate::raster::RasterImage;
use crate::scene::{composite_scene, remove_element_oracle, visible_footprint, SceneError, SceneSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OraclePlan {
    Select(String),
    LevelExhausted,
}

/// Smallest visible area at `level`, ties by id.
pub fn oracle_plan(spec: &SceneSpec, level: SemanticLevel) -> OraclePlan {
    oracle_plan_excluding(spec, level, &BTreeSet::new())
}

/// [`oracle_plan`] that ignores the ids in `excluded`.
pub fn oracle_plan_excluding(spec: &SceneSpec, level: SemanticLevel, excluded: &BTreeSet<String>) -> OraclePlan {
    spec.elements
        .iter()
        .filter(|e| e.level == level && !excluded.contains(&e.id))
        .map(|e| {
            let area = visible_footprint(spec, &e.id).map(|m| m.area()).unwrap_or(0);
            (area, e.id.as_str())
        })
        .min()
        .map_or(OraclePlan::LevelExhausted, |(_, id)| OraclePlan::Select(id.to_string()))
}

/// Perfect inpainting: the scene rendered without `id`.
pub fn oracle_edit(spec: &SceneSpec, id: &str) -> Result<RasterImage, SceneError> {
    composite_scene(&remove_element_oracle(spec, id)?)
}
