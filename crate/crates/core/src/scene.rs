//! Declarative layered scenes and the deterministic compositor used as the
//! ground-truth world for every pipeline test.
//!
//! A scene is a background fill plus elements, each with a full-frame mask,
//! a z-order and a taxonomy level. Compositing paints the background and
//! then each element inside its mask in ascending z (list order breaks ties).
//!
//! # JSON schema
//!
//! ```json
//! {
//!   "dimensions": {"width": 64, "height": 64},
//!   "background": {"solid": [1.0, 1.0, 1.0]},
//!   "elements": [
//!     {"id": "mug", "level": "secondary", "z": 1,
//!      "mask": {"rect": [10, 12, 8, 8]},
//!      "appearance": {"solid": [0.9, 0.1, 0.1]},
//!      "description": "a red mug"}
//!   ]
//! }
//! ```
//!
//! `mask` is one of `{"rect": [x, y, w, h]}`, `{"ellipse": [cx, cy, rx, ry]}`,
//! `{"png": "relative/or/absolute.png"}` (grayscale, thresholded at 128) or
//! `{"rle": [..]}` (alternating run lengths starting with an unset run).

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::level::SemanticLevel;
use crate::raster::{from_u8, to_u8, BinaryMask, RasterError, RasterImage};

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("element {id:?}: mask is {mask:?}, scene is {scene:?}")]
    DimensionMismatch { id: String, mask: (u32, u32), scene: (u32, u32) },
    #[error("duplicate element id {0:?}")]
    DuplicateId(String),
    #[error("element {0:?} has an empty mask")]
    EmptyMask(String),
    #[error("unknown element {0:?}")]
    UnknownElement(String),
    #[error("color component {0} outside [0, 1]")]
    InvalidColor(f32),
    #[error("run-length mask covers {got} pixels, expected {expected}")]
    BadRle { expected: usize, got: usize },
    #[error("mask file {path}: {source}")]
    MaskFile { path: PathBuf, source: RasterError },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a region is filled. Textures are evaluated in absolute frame
/// coordinates, so revealing a background shows the same pattern wherever
/// it is uncovered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Appearance {
    Solid([f32; 3]),
    /// Blocky value noise: every `cell`×`cell` block gets a per-channel
    /// offset in `[-amplitude, amplitude]` around `base`.
    Noise {
        base: [f32; 3],
        amplitude: f32,
        cell: u32,
        seed: u64,
    },
}

impl Appearance {
    pub fn sample(&self, x: u32, y: u32) -> [f32; 3] {
        match *self {
            Appearance::Solid(c) => c,
            Appearance::Noise { base, amplitude, cell, seed } => {
                let cell = cell.max(1);
                let (cx, cy) = ((x / cell) as u64, (y / cell) as u64);
                std::array::from_fn(|ch| {
                    let h = splitmix64(
                        seed ^ cx.wrapping_mul(0x9E37_79B9_7F4A_7C15)
                            ^ cy.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
                            ^ (ch as u64).wrapping_mul(0x1656_67B1_9E37_79F9),
                    );
                    let u = (h >> 11) as f32 / (1u64 << 53) as f32;
                    (base[ch] + (2.0 * u - 1.0) * amplitude).clamp(0.0, 1.0)
                })
            }
        }
    }

    fn validate(&self) -> Result<(), SceneError> {
        let colors = match self {
            Appearance::Solid(c) => *c,
            Appearance::Noise { base, .. } => *base,
        };
        match colors.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            Some(&c) => Err(SceneError::InvalidColor(c)),
            None => Ok(()),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneElement {
    pub id: String,
    pub level: SemanticLevel,
    pub z_order: i32,
    pub mask: BinaryMask,
    pub appearance: Appearance,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub background: Appearance,
    pub elements: Vec<SceneElement>,
}

impl SceneSpec {
    pub fn new(width: u32, height: u32, background: Appearance) -> Self {
        Self { width, height, background, elements: Vec::new() }
    }

    pub fn with_element(mut self, element: SceneElement) -> Self {
        self.elements.push(element);
        self
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.width == 0 || self.height == 0 {
            return Err(RasterError::EmptyDimensions { width: self.width, height: self.height }.into());
        }
        self.background.validate()?;
        let mut seen = HashSet::new();
        for e in &self.elements {
            if !seen.insert(e.id.as_str()) {
                return Err(SceneError::DuplicateId(e.id.clone()));
            }
            if e.mask.dims() != self.dims() {
                return Err(SceneError::DimensionMismatch {
                    id: e.id.clone(),
                    mask: e.mask.dims(),
                    scene: self.dims(),
                });
            }
            if e.mask.is_empty() {
                return Err(SceneError::EmptyMask(e.id.clone()));
            }
            e.appearance.validate()?;
        }
        Ok(())
    }

    pub fn element(&self, id: &str) -> Option<&SceneElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    fn position(&self, id: &str) -> Result<usize, SceneError> {
        self.elements.iter().position(|e| e.id == id).ok_or_else(|| SceneError::UnknownElement(id.to_string()))
    }

    /// Element indices in painting order: ascending z, list order on ties.
    fn paint_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.elements.len()).collect();
        order.sort_by_key(|&i| self.elements[i].z_order);
        order
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.elements.iter().map(|e| e.id.as_str())
    }

    pub fn to_json(&self) -> Result<String, SceneError> {
        Ok(serde_json::to_string_pretty(&SceneFile::from_spec(self))?)
    }

    /// Parses the JSON schema; `png` mask paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self, SceneError> {
        let file: SceneFile = serde_json::from_str(text)?;
        let spec = file.into_spec(base_dir)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, path.parent())
    }
}

/// Renders the scene. Output intensities sit on the 8-bit grid so that PNG
/// storage is lossless.
pub fn composite_scene(spec: &SceneSpec) -> Result<RasterImage, SceneError> {
    spec.validate()?;
    Ok(render_unchecked(spec))
}

fn render_unchecked(spec: &SceneSpec) -> RasterImage {
    let order = spec.paint_order();
    RasterImage::from_fn(spec.width, spec.height, |x, y| {
        let top = order.iter().rev().map(|&i| &spec.elements[i]).find(|e| e.mask.get(x, y));
        let rgb = match top {
            Some(e) => e.appearance.sample(x, y),
            None => spec.background.sample(x, y),
        };
        rgb.map(|v| from_u8(to_u8(v)))
    })
    .expect("validated scene has non-zero dimensions")
}

/// Perfect removal: the same scene without `id`.
pub fn remove_element_oracle(spec: &SceneSpec, id: &str) -> Result<SceneSpec, SceneError> {
    let pos = spec.position(id)?;
    let mut out = spec.clone();
    out.elements.remove(pos);
    Ok(out)
}

/// The element's mask minus every pixel painted over by a later element.
/// An empty result marks a fully occluded (degenerate) element.
pub fn visible_footprint(spec: &SceneSpec, id: &str) -> Result<BinaryMask, SceneError> {
    let pos = spec.position(id)?;
    let order = spec.paint_order();
    let rank = order.iter().position(|&i| i == pos).expect("element is in paint order");
    let mut visible = spec.elements[pos].mask.clone();
    for &later in &order[rank + 1..] {
        visible = visible.difference(&spec.elements[later].mask);
    }
    Ok(visible)
}

// ---- on-disk schema -------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct Dimensions {
    width: u32,
    height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MaskSpec {
    Rect([i64; 4]),
    Ellipse([f32; 4]),
    Png(PathBuf),
    Rle(Vec<u32>),
}

#[derive(Debug, Serialize, Deserialize)]
struct ElementFile {
    id: String,
    level: SemanticLevel,
    #[serde(default)]
    z: i32,
    mask: MaskSpec,
    appearance: Appearance,
    #[serde(default)]
    description: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    dimensions: Dimensions,
    background: Appearance,
    #[serde(default)]
    elements: Vec<ElementFile>,
}

impl SceneFile {
    fn from_spec(spec: &SceneSpec) -> Self {
        Self {
            dimensions: Dimensions { width: spec.width, height: spec.height },
            background: spec.background.clone(),
            elements: spec
                .elements
                .iter()
                .map(|e| ElementFile {
                    id: e.id.clone(),
                    level: e.level,
                    z: e.z_order,
                    mask: encode_mask(&e.mask),
                    appearance: e.appearance.clone(),
                    description: e.description.clone(),
                })
                .collect(),
        }
    }

    fn into_spec(self, base_dir: Option<&Path>) -> Result<SceneSpec, SceneError> {
        let (w, h) = (self.dimensions.width, self.dimensions.height);
        let elements = self
            .elements
            .into_iter()
            .map(|e| {
                Ok(SceneElement {
                    mask: decode_mask(e.mask, w, h, base_dir)?,
                    id: e.id,
                    level: e.level,
                    z_order: e.z,
                    appearance: e.appearance,
                    description: e.description,
                })
            })
            .collect::<Result<Vec<_>, SceneError>>()?;
        Ok(SceneSpec { width: w, height: h, background: self.background, elements })
    }
}

fn encode_mask(mask: &BinaryMask) -> MaskSpec {
    if let Some(rect) = bounding_rect_if_exact(mask) {
        return MaskSpec::Rect(rect);
    }
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in mask.data() {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    MaskSpec::Rle(runs)
}

fn bounding_rect_if_exact(mask: &BinaryMask) -> Option<[i64; 4]> {
    let (w, h) = mask.dims();
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == u32::MAX {
        return None;
    }
    let rect_area = ((x1 - x0 + 1) * (y1 - y0 + 1)) as usize;
    (rect_area == mask.area()).then(|| [x0 as i64, y0 as i64, (x1 - x0 + 1) as i64, (y1 - y0 + 1) as i64])
}

fn decode_mask(spec: MaskSpec, w: u32, h: u32, base_dir: Option<&Path>) -> Result<BinaryMask, SceneError> {
    match spec {
        MaskSpec::Rect([x, y, rw, rh]) => Ok(BinaryMask::rect(w, h, x, y, rw.max(0) as u32, rh.max(0) as u32)),
        MaskSpec::Ellipse([cx, cy, rx, ry]) => Ok(BinaryMask::ellipse(w, h, cx, cy, rx, ry)),
        MaskSpec::Png(path) => {
            let full = match base_dir {
                Some(dir) if path.is_relative() => dir.join(&path),
                _ => path.clone(),
            };
            BinaryMask::load_png(&full).map_err(|source| SceneError::MaskFile { path: full, source })
        }
        MaskSpec::Rle(runs) => {
            let expected = w as usize * h as usize;
            let got: usize = runs.iter().map(|&r| r as usize).sum();
            if got != expected {
                return Err(SceneError::BadRle { expected, got });
            }
            let mut data = Vec::with_capacity(expected);
            for (i, &r) in runs.iter().enumerate() {
                data.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
            }
            Ok(BinaryMask::from_vec(w, h, data)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const WHITE: [f32; 3] = [1.0, 1.0, 1.0];
    const RED: [f32; 3] = [1.0, 0.0, 0.0];
    const BLUE: [f32; 3] = [0.0, 0.0, 1.0];

    fn element(id: &str, z: i32, mask: BinaryMask, color: [f32; 3]) -> SceneElement {
        SceneElement {
            id: id.into(),
            level: SemanticLevel::Secondary,
            z_order: z,
            mask,
            appearance: Appearance::Solid(color),
            description: format!("the {id}"),
        }
    }

    fn count_color(img: &RasterImage, color: [f32; 3]) -> usize {
        (0..img.pixel_count()).filter(|&i| img.get_index(i) == color).count()
    }

    #[test]
    fn empty_scene_renders_background() {
        let spec = SceneSpec::new(16, 9, Appearance::Solid([0.2, 0.4, 0.6]));
        let img = composite_scene(&spec).unwrap();
        let expected = [0.2f32, 0.4, 0.6].map(|v| from_u8(to_u8(v)));
        assert_eq!(count_color(&img, expected), 16 * 9);
    }

    #[test]
    fn single_square_paints_exactly_its_footprint() {
        let spec = SceneSpec::new(64, 64, Appearance::Solid(WHITE)).with_element(element(
            "sq",
            1,
            BinaryMask::rect(64, 64, 20, 30, 10, 10),
            RED,
        ));
        let img = composite_scene(&spec).unwrap();
        assert_eq!(count_color(&img, RED), 100);
        for y in 30..40 {
            for x in 20..30 {
                assert_eq!(img.get(x, y), RED);
            }
        }
    }

    #[test]
    fn higher_z_wins_overlap() {
        let spec = SceneSpec::new(20, 20, Appearance::Solid(WHITE))
            .with_element(element("top", 2, BinaryMask::rect(20, 20, 5, 5, 6, 6), BLUE))
            .with_element(element("low", 1, BinaryMask::rect(20, 20, 0, 0, 8, 8), RED));
        let img = composite_scene(&spec).unwrap();
        assert_eq!(img.get(6, 6), BLUE);
        assert_eq!(img.get(1, 1), RED);
    }

    #[test]
    fn mask_dimension_mismatch_is_rejected() {
        let spec = SceneSpec::new(20, 20, Appearance::Solid(WHITE)).with_element(element(
            "a",
            1,
            BinaryMask::rect(10, 10, 0, 0, 2, 2),
            RED,
        ));
        assert!(matches!(composite_scene(&spec), Err(SceneError::DimensionMismatch { .. })));
    }

    #[test]
    fn duplicate_ids_and_empty_masks_are_rejected() {
        let base = SceneSpec::new(10, 10, Appearance::Solid(WHITE));
        let dup = base
            .clone()
            .with_element(element("a", 1, BinaryMask::rect(10, 10, 0, 0, 2, 2), RED))
            .with_element(element("a", 2, BinaryMask::rect(10, 10, 4, 4, 2, 2), RED));
        assert!(matches!(dup.validate(), Err(SceneError::DuplicateId(_))));
        let empty = base.with_element(element("a", 1, BinaryMask::empty(10, 10), RED));
        assert!(matches!(empty.validate(), Err(SceneError::EmptyMask(_))));
    }

    #[test]
    fn removing_only_element_gives_background() {
        let spec = SceneSpec::new(32, 32, Appearance::Solid(WHITE)).with_element(element(
            "a",
            1,
            BinaryMask::rect(32, 32, 4, 4, 9, 9),
            RED,
        ));
        let removed = remove_element_oracle(&spec, "a").unwrap();
        let bg = composite_scene(&SceneSpec::new(32, 32, Appearance::Solid(WHITE))).unwrap();
        assert_eq!(composite_scene(&removed).unwrap(), bg);
        assert!(matches!(remove_element_oracle(&spec, "zz"), Err(SceneError::UnknownElement(_))));
    }

    #[test]
    fn remove_then_readd_is_identity() {
        let spec = SceneSpec::new(32, 32, Appearance::Solid(WHITE))
            .with_element(element("a", 1, BinaryMask::rect(32, 32, 4, 4, 9, 9), RED))
            .with_element(element("b", 2, BinaryMask::rect(32, 32, 8, 8, 9, 9), BLUE));
        let original = composite_scene(&spec).unwrap();
        let mut readded = remove_element_oracle(&spec, "a").unwrap();
        readded.elements.insert(0, spec.elements[0].clone());
        assert_eq!(composite_scene(&readded).unwrap(), original);
    }

    #[test]
    fn occluded_removal_changes_only_visible_pixels() {
        let spec = SceneSpec::new(32, 32, Appearance::Solid(WHITE))
            .with_element(element("under", 1, BinaryMask::rect(32, 32, 4, 4, 10, 10), RED))
            .with_element(element("over", 2, BinaryMask::rect(32, 32, 9, 4, 10, 10), BLUE));
        let before = composite_scene(&spec).unwrap();
        let after = composite_scene(&remove_element_oracle(&spec, "under").unwrap()).unwrap();
        let footprint = visible_footprint(&spec, "under").unwrap();
        let diff = BinaryMask::threshold(32, 32, &before.channel_max_abs_diff(&after), 1e-6);
        assert!(diff.is_subset_of(&footprint));
        assert_eq!(diff, footprint);
    }

    #[test]
    fn footprints() {
        let spec = SceneSpec::new(40, 40, Appearance::Solid(WHITE))
            .with_element(element("free", 1, BinaryMask::rect(40, 40, 30, 30, 5, 5), RED))
            .with_element(element("half", 1, BinaryMask::rect(40, 40, 0, 0, 10, 10), RED))
            .with_element(element("cover", 3, BinaryMask::rect(40, 40, 5, 0, 20, 20), BLUE))
            .with_element(element("hidden", 2, BinaryMask::rect(40, 40, 10, 10, 4, 4), RED));
        let free = visible_footprint(&spec, "free").unwrap();
        assert_eq!(free, spec.element("free").unwrap().mask);
        assert_eq!(visible_footprint(&spec, "half").unwrap().area(), 50);
        assert!(visible_footprint(&spec, "hidden").unwrap().is_empty());
    }

    #[test]
    fn noise_texture_is_deterministic_and_bounded() {
        let a = Appearance::Noise { base: [0.5; 3], amplitude: 0.2, cell: 4, seed: 7 };
        assert_eq!(a.sample(3, 3), a.sample(0, 0));
        assert_eq!(a.sample(13, 2), a.sample(13, 2));
        for y in 0..32 {
            for x in 0..32 {
                assert!(a.sample(x, y).iter().all(|v| (0.3..=0.7).contains(v)));
            }
        }
    }

    #[test]
    fn json_schema_parses_rect_ellipse_and_png_masks() {
        let dir = tempfile::tempdir().unwrap();
        BinaryMask::rect(16, 16, 1, 1, 3, 3).save_png(dir.path().join("m.png")).unwrap();
        let text = r#"{
            "dimensions": {"width": 16, "height": 16},
            "background": {"solid": [1, 1, 1]},
            "elements": [
                {"id": "r", "level": "distractor", "z": 1, "mask": {"rect": [0, 0, 2, 2]},
                 "appearance": {"solid": [1, 0, 0]}},
                {"id": "e", "level": "primary", "z": 2, "mask": {"ellipse": [8, 8, 3, 2]},
                 "appearance": {"noise": {"base": [0.5, 0.5, 0.5], "amplitude": 0.1, "cell": 2, "seed": 1}}},
                {"id": "p", "level": "background", "z": 0, "mask": {"png": "m.png"},
                 "appearance": {"solid": [0, 1, 0]}, "description": "floor"}
            ]
        }"#;
        let spec = SceneSpec::from_json(text, Some(dir.path())).unwrap();
        assert_eq!(spec.elements.len(), 3);
        assert_eq!(spec.element("r").unwrap().mask.area(), 4);
        assert_eq!(spec.element("p").unwrap().mask.area(), 9);
        assert_eq!(spec.element("e").unwrap().level, SemanticLevel::Primary);
        assert!(SceneSpec::from_json(
            r#"{"dimensions":{"width":4,"height":4},"background":{"solid":[1,1,1]},
            "elements":[{"id":"x","level":"structural","mask":{"rect":[0,0,1,1]},"appearance":{"solid":[0,0,0]}}]}"#,
            None
        )
        .is_err());
    }

    #[test]
    fn json_round_trip_preserves_structure() {
        let spec = SceneSpec::new(24, 20, Appearance::Solid(WHITE))
            .with_element(element("a", 1, BinaryMask::rect(24, 20, 2, 3, 5, 4), RED))
            .with_element(element("b", -1, BinaryMask::ellipse(24, 20, 12.0, 10.0, 6.0, 4.0), BLUE));
        let back = SceneSpec::from_json(&spec.to_json().unwrap(), None).unwrap();
        assert_eq!(back, spec);
    }
}
