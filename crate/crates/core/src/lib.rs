//! Progressive removal of scene elements, one semantic level at a time.

pub mod engine;
pub mod eval;
pub mod level;
pub mod localize;
pub mod planner;
pub mod raster;
pub mod scene;
pub mod synth;
pub mod verify;

pub use level::SemanticLevel;
pub use raster::{BinaryMask, RasterError, RasterImage};
pub use scene::{composite_scene, remove_element_oracle, visible_footprint, SceneElement, SceneError, SceneSpec};
