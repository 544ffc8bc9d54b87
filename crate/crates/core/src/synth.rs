//! Seeded generators for synthetic scenes and removal videos with known
//! ground truth. Used by the test suites and the `subtract` CLI demo mode.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::level::SemanticLevel;
use crate::raster::{BinaryMask, RasterImage};
use crate::scene::{composite_scene, visible_footprint, Appearance, SceneElement, SceneSpec};

/// Intensities used for palette colors. Any two distinct palette colors
/// differ by at least 0.4 in some channel.
const PALETTE_LEVELS: [f32; 3] = [0.1, 0.5, 0.9];

/// Every color of the 27-entry palette.
pub fn palette() -> Vec<[f32; 3]> {
    let mut out = Vec::with_capacity(27);
    for &r in &PALETTE_LEVELS {
        for &g in &PALETTE_LEVELS {
            for &b in &PALETTE_LEVELS {
                out.push([r, g, b]);
            }
        }
    }
    out
}

fn color_name(c: [f32; 3]) -> String {
    let word = |v: f32| match v {
        v if v < 0.3 => "dark",
        v if v < 0.7 => "mid",
        _ => "bright",
    };
    format!("{}-{}-{}", word(c[0]), word(c[1]), word(c[2]))
}

#[derive(Debug, Clone)]
pub struct SceneGenConfig {
    pub width: u32,
    pub height: u32,
    pub min_elements: usize,
    pub max_elements: usize,
    /// Minimum number of distinct levels present.
    pub min_levels: usize,
    /// When false, elements are kept at least `gap` pixels apart.
    pub allow_overlap: bool,
    pub gap: u32,
    /// Low-amplitude value noise on the canvas instead of a flat color.
    pub textured_canvas: bool,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            min_elements: 3,
            max_elements: 10,
            min_levels: 3,
            allow_overlap: false,
            gap: 7,
            textured_canvas: false,
        }
    }
}

fn size_range(level: SemanticLevel, short_side: u32) -> (u32, u32) {
    // Fractions of the short side, tuned for ~96px frames.
    let s = short_side as f32;
    let (lo, hi) = match level {
        SemanticLevel::Distractor => (0.06, 0.10),
        SemanticLevel::Secondary => (0.09, 0.14),
        SemanticLevel::Primary => (0.13, 0.20),
        SemanticLevel::Background => (0.18, 0.28),
    };
    let lo = ((s * lo).round() as u32).max(5);
    let hi = ((s * hi).round() as u32).max(lo + 1);
    (lo, hi)
}

fn random_shape(rng: &mut impl Rng, w: u32, h: u32, level: SemanticLevel) -> BinaryMask {
    let (lo, hi) = size_range(level, w.min(h));
    let sw = rng.random_range(lo..=hi).min(w);
    let sh = rng.random_range(lo..=hi).min(h);
    let x = rng.random_range(0..=(w - sw)) as i64;
    let y = rng.random_range(0..=(h - sh)) as i64;
    if rng.random_bool(0.5) {
        BinaryMask::rect(w, h, x, y, sw, sh)
    } else {
        let rx = sw as f32 / 2.0;
        let ry = sh as f32 / 2.0;
        BinaryMask::ellipse(w, h, x as f32 + rx - 0.5, y as f32 + ry - 0.5, rx, ry)
    }
}

fn pick_levels(rng: &mut impl Rng, n: usize, min_levels: usize) -> Vec<SemanticLevel> {
    let mut distinct = SemanticLevel::ALL.to_vec();
    distinct.shuffle(rng);
    let mut levels: Vec<SemanticLevel> = distinct.into_iter().take(min_levels.min(4)).collect();
    while levels.len() < n {
        // Lower levels are more common, as in cluttered photos.
        let roll: f32 = rng.random();
        levels.push(match roll {
            r if r < 0.35 => SemanticLevel::Distractor,
            r if r < 0.65 => SemanticLevel::Secondary,
            r if r < 0.85 => SemanticLevel::Primary,
            _ => SemanticLevel::Background,
        });
    }
    levels.shuffle(rng);
    levels
}

/// Draws a random scene. Deterministic in `seed`.
///
/// Every element gets a distinct palette color (also distinct from the
/// canvas) and keeps a visible footprint of at least half its mask.
pub fn random_scene(config: &SceneGenConfig, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (config.width, config.height);
    'attempt: loop {
        let n = rng.random_range(config.min_elements..=config.max_elements.max(config.min_elements));
        let levels = pick_levels(&mut rng, n, config.min_levels.min(n));
        let mut colors = palette();
        colors.shuffle(&mut rng);
        let canvas_color = colors.pop().expect("palette is non-empty");
        let background = if config.textured_canvas {
            Appearance::Noise { base: canvas_color, amplitude: 0.03, cell: 4, seed: rng.random() }
        } else {
            Appearance::Solid(canvas_color)
        };
        let mut spec = SceneSpec::new(w, h, background);
        let mut occupied = BinaryMask::empty(w, h);
        for (i, &level) in levels.iter().enumerate() {
            let color = colors.pop().expect("at most 10 elements");
            let z = match level {
                SemanticLevel::Background => rng.random_range(0..2),
                _ => rng.random_range(2..12),
            };
            let mut placed = false;
            for _ in 0..200 {
                let mask = random_shape(&mut rng, w, h, level);
                if mask.area() < 20 {
                    continue;
                }
                if !config.allow_overlap && mask.dilate(config.gap).intersection_area(&occupied) > 0 {
                    continue;
                }
                let candidate = spec.clone().with_element(SceneElement {
                    id: format!("e{i}"),
                    level,
                    z_order: z,
                    mask: mask.clone(),
                    appearance: Appearance::Solid(color),
                    description: format!("{} {} object", color_name(color), level),
                });
                if config.allow_overlap && !footprints_healthy(&candidate) {
                    continue;
                }
                occupied.union_in_place(&mask);
                spec = candidate;
                placed = true;
                break;
            }
            if !placed {
                continue 'attempt;
            }
        }
        return spec;
    }
}

fn footprints_healthy(spec: &SceneSpec) -> bool {
    spec.elements.iter().all(|e| {
        let visible = visible_footprint(spec, &e.id).map(|m| m.area()).unwrap_or(0);
        visible >= 20 && visible * 2 >= e.mask.area()
    })
}

/// A synthetic removal video with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub frames: Vec<RasterImage>,
    pub spec: SceneSpec,
    /// Element id, ground-truth mask in the first frame, and the frame index
    /// at which it disappears (`None` if it never does).
    pub schedule: Vec<(String, BinaryMask, Option<usize>)>,
}

/// Renders a `frames`-long video from `spec` in which each scheduled element
/// vanishes at its frame index and stays gone.
pub fn render_schedule(spec: &SceneSpec, removal_frames: &[(String, Option<usize>)], frames: usize) -> SyntheticVideo {
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut current = spec.clone();
        current.elements.retain(|e| !removal_frames.iter().any(|(id, at)| id == &e.id && at.is_some_and(|at| at <= t)));
        out.push(composite_scene(&current).expect("generated scenes are valid"));
    }
    let schedule = removal_frames
        .iter()
        .map(|(id, at)| {
            let mask = visible_footprint(spec, id).expect("scheduled ids exist");
            (id.clone(), mask, *at)
        })
        .collect();
    SyntheticVideo { frames: out, spec: spec.clone(), schedule }
}

/// Random detection benchmark video: non-overlapping objects with 64 to
/// 300 pixel areas, distinct removal frames in `1..frames`, and some
/// objects that are never removed.
pub fn random_removal_video(width: u32, height: u32, frames: usize, seed: u64) -> SyntheticVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut colors = palette();
    colors.shuffle(&mut rng);
    let canvas = colors.pop().expect("palette is non-empty");
    let mut spec = SceneSpec::new(width, height, Appearance::Solid(canvas));
    let mut occupied = BinaryMask::empty(width, height);
    let n = rng.random_range(3..=6usize).min(frames.saturating_sub(1).max(1));
    for i in 0..n {
        for _ in 0..500 {
            let sw = rng.random_range(8..=17u32);
            let sh = rng.random_range(8..=17u32);
            let x = rng.random_range(0..=(width - sw)) as i64;
            let y = rng.random_range(0..=(height - sh)) as i64;
            let mask = BinaryMask::rect(width, height, x, y, sw, sh);
            if !(64..=300).contains(&mask.area()) || mask.dilate(3).intersection_area(&occupied) > 0 {
                continue;
            }
            occupied.union_in_place(&mask);
            let level = SemanticLevel::from_ordinal(rng.random_range(0..4)).expect("ordinal < 4");
            spec = spec.with_element(SceneElement {
                id: format!("o{i}"),
                level,
                z_order: i as i32,
                mask,
                appearance: Appearance::Solid(colors.pop().expect("palette has room")),
                description: String::new(),
            });
            break;
        }
    }
    let mut slots: Vec<usize> = (1..frames).collect();
    slots.shuffle(&mut rng);
    let mut removal = Vec::new();
    for (k, e) in spec.elements.iter().enumerate() {
        // Roughly a quarter of objects persist, but at least one is removed.
        let keep = k > 0 && rng.random_bool(0.25);
        let at = if keep { None } else { slots.pop() };
        removal.push((e.id.clone(), at));
    }
    render_schedule(&spec, &removal, frames)
}
