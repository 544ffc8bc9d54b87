//! Harris corners on the color structure tensor, normalized color patch
//! descriptors, and mutual nearest-neighbor matching.

use crate::raster::{blur_plane, RasterImage};

/// Patch half-size; descriptors cover a 7×7 window.
const PATCH_RADIUS: i64 = 3;
const HARRIS_K: f32 = 0.04;
const TENSOR_SIGMA: f32 = 1.5;
/// Responses below this fraction of the strongest one are ignored.
const RELATIVE_THRESHOLD: f32 = 0.01;
const ABSOLUTE_THRESHOLD: f32 = 1e-7;
const NMS_RADIUS: i64 = 2;
const RATIO: f32 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub response: f32,
    pub descriptor: Vec<f32>,
}

fn harris_response(img: &RasterImage) -> Vec<f32> {
    let (w, h) = img.dims();
    let (wi, hi) = (w as i64, h as i64);
    let n = img.pixel_count();
    let mut sxx = vec![0.0f32; n];
    let mut syy = vec![0.0f32; n];
    let mut sxy = vec![0.0f32; n];
    let at = |x: i64, y: i64, c: usize| -> f32 {
        let x = x.clamp(0, wi - 1) as u32;
        let y = y.clamp(0, hi - 1) as u32;
        img.get(x, y)[c]
    };
    for y in 0..hi {
        for x in 0..wi {
            let i = (y * wi + x) as usize;
            for c in 0..3 {
                // Sobel
                let gx = (at(x + 1, y - 1, c) + 2.0 * at(x + 1, y, c) + at(x + 1, y + 1, c))
                    - (at(x - 1, y - 1, c) + 2.0 * at(x - 1, y, c) + at(x - 1, y + 1, c));
                let gy = (at(x - 1, y + 1, c) + 2.0 * at(x, y + 1, c) + at(x + 1, y + 1, c))
                    - (at(x - 1, y - 1, c) + 2.0 * at(x, y - 1, c) + at(x + 1, y - 1, c));
                let (gx, gy) = (gx / 8.0, gy / 8.0);
                sxx[i] += gx * gx;
                syy[i] += gy * gy;
                sxy[i] += gx * gy;
            }
        }
    }
    let sxx = blur_plane(&sxx, w, h, TENSOR_SIGMA);
    let syy = blur_plane(&syy, w, h, TENSOR_SIGMA);
    let sxy = blur_plane(&sxy, w, h, TENSOR_SIGMA);
    (0..n)
        .map(|i| {
            let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
            let tr = sxx[i] + syy[i];
            det - HARRIS_K * tr * tr
        })
        .collect()
}

/// Normalized 7×7×3 patch around an integer location, or `None` for a flat
/// patch.
fn describe(img: &RasterImage, x: i64, y: i64) -> Option<Vec<f32>> {
    let mut d = Vec::with_capacity(((2 * PATCH_RADIUS + 1).pow(2) * 3) as usize);
    for dy in -PATCH_RADIUS..=PATCH_RADIUS {
        for dx in -PATCH_RADIUS..=PATCH_RADIUS {
            d.extend_from_slice(&img.get((x + dx) as u32, (y + dy) as u32));
        }
    }
    // Per-channel mean removal makes the descriptor blind to global shifts.
    for c in 0..3 {
        let mean = d.iter().skip(c).step_by(3).sum::<f32>() / (d.len() / 3) as f32;
        d.iter_mut().skip(c).step_by(3).for_each(|v| *v -= mean);
    }
    let norm = d.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm < 1e-4 {
        return None;
    }
    d.iter_mut().for_each(|v| *v /= norm);
    Some(d)
}

/// Detects up to `max_keypoints` corners, strongest first.
pub fn detect_keypoints(img: &RasterImage, max_keypoints: usize) -> Vec<Keypoint> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let border = PATCH_RADIUS + 1;
    if w <= 2 * border || h <= 2 * border {
        return Vec::new();
    }
    let r = harris_response(img);
    let max = r.iter().copied().fold(0.0f32, f32::max);
    let floor = (max * RELATIVE_THRESHOLD).max(ABSOLUTE_THRESHOLD);
    let idx = |x: i64, y: i64| (y * w + x) as usize;
    let mut peaks = Vec::new();
    for y in border..h - border {
        for x in border..w - border {
            let v = r[idx(x, y)];
            if v < floor {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -NMS_RADIUS..=NMS_RADIUS {
                for dx in -NMS_RADIUS..=NMS_RADIUS {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let nv = r[idx(nx, ny)];
                    // Ties resolve toward the earlier pixel in raster order.
                    if nv > v || (nv == v && (dy < 0 || (dy == 0 && dx < 0))) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                peaks.push((x, y, v));
            }
        }
    }
    peaks.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
    let mut out = Vec::new();
    for (x, y, v) in peaks {
        if out.len() >= max_keypoints {
            break;
        }
        let Some(descriptor) = describe(img, x, y) else { continue };
        let refine = |a: f32, b: f32| {
            let denom = a - 2.0 * v + b;
            if denom.abs() < 1e-12 {
                0.0
            } else {
                ((a - b) / (2.0 * denom)).clamp(-0.5, 0.5) as f64
            }
        };
        let ox = refine(r[idx(x - 1, y)], r[idx(x + 1, y)]);
        let oy = refine(r[idx(x, y - 1)], r[idx(x, y + 1)]);
        out.push(Keypoint { x: x as f64 + ox, y: y as f64 + oy, response: v, descriptor });
    }
    out
}

fn distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
}

/// Nearest neighbor of `d` in `pool` with the ratio test applied.
fn best_match(d: &[f32], pool: &[Keypoint]) -> Option<usize> {
    let mut best = (f32::INFINITY, usize::MAX);
    let mut second = f32::INFINITY;
    for (j, k) in pool.iter().enumerate() {
        let dist = distance(d, &k.descriptor);
        if dist < best.0 {
            second = best.0;
            best = (dist, j);
        } else if dist < second {
            second = dist;
        }
    }
    if best.1 == usize::MAX {
        return None;
    }
    // A lone candidate or a clear winner passes the ratio test.
    if second.is_finite() && best.0 >= RATIO * second {
        return None;
    }
    Some(best.1)
}

/// Index pairs `(i, j)` where `a[i]` and `b[j]` are mutual nearest neighbors
/// that both pass the ratio test.
pub fn match_keypoints(a: &[Keypoint], b: &[Keypoint]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, ka) in a.iter().enumerate() {
        let Some(j) = best_match(&ka.descriptor, b) else { continue };
        if best_match(&b[j].descriptor, a) == Some(i) {
            out.push((i, j));
        }
    }
    out
}
