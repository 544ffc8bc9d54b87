//! Projective and affine estimation, random-sample consensus, and warping.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::raster::RasterImage;

pub type Point = (f64, f64);

pub fn apply(h: &Matrix3<f64>, p: Point) -> Option<Point> {
    let v = h * Vector3::new(p.0, p.1, 1.0);
    if v.z.abs() < 1e-12 {
        return None;
    }
    Some((v.x / v.z, v.y / v.z))
}

/// Similarity that moves the centroid to the origin and the mean distance to
/// sqrt(2).
fn hartley(points: &[Point]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_dist = points.iter().map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if mean_dist > 1e-12 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Scales so the bottom-right entry is 1.
pub fn normalize_h(h: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let z = h[(2, 2)];
    if z.abs() < 1e-12 || !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(h / z)
}

/// Direct linear transform over all correspondences `src → dst`.
pub fn fit_homography(src: &[Point], dst: &[Point]) -> Option<Matrix3<f64>> {
    if src.len() < 4 || src.len() != dst.len() {
        return None;
    }
    let ts = hartley(src);
    let td = hartley(dst);
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
    for (k, (s, d)) in src.iter().zip(dst).enumerate() {
        let (x, y) = apply(&ts, *s)?;
        let (u, v) = apply(&td, *d)?;
        let r = 2 * k;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let (min_idx, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = eig.eigenvectors.column(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let full = td.try_inverse()? * hn * ts;
    normalize_h(&full)
}

/// Least-squares affine map `src → dst`.
pub fn fit_affine(src: &[Point], dst: &[Point]) -> Option<Matrix3<f64>> {
    if src.len() < 3 || src.len() != dst.len() {
        return None;
    }
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 6);
    let mut b = DVector::<f64>::zeros(2 * src.len());
    for (k, (s, d)) in src.iter().zip(dst).enumerate() {
        a.row_mut(2 * k).copy_from_slice(&[s.0, s.1, 1.0, 0.0, 0.0, 0.0]);
        a.row_mut(2 * k + 1).copy_from_slice(&[0.0, 0.0, 0.0, s.0, s.1, 1.0]);
        b[2 * k] = d.0;
        b[2 * k + 1] = d.1;
    }
    let x = a.svd(true, true).solve(&b, 1e-10).ok()?;
    let m = Matrix3::new(x[0], x[1], x[2], x[3], x[4], x[5], 0.0, 0.0, 1.0);
    // Rank-deficient inputs give a singular map.
    (m.determinant().abs() > 1e-9).then_some(m)
}

pub fn condition_number(h: &Matrix3<f64>) -> f64 {
    let sv = h.svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0f64, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn reprojection_error(h: &Matrix3<f64>, s: Point, d: Point) -> f64 {
    match apply(h, s) {
        Some(p) => ((p.0 - d.0).powi(2) + (p.1 - d.1).powi(2)).sqrt(),
        None => f64::INFINITY,
    }
}

fn inliers(h: &Matrix3<f64>, src: &[Point], dst: &[Point], threshold: f64) -> Vec<usize> {
    (0..src.len()).filter(|&i| reprojection_error(h, src[i], dst[i]) < threshold).collect()
}

/// Three of the four points nearly collinear makes the minimal fit unstable.
fn degenerate(points: &[Point]) -> bool {
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            for k in j + 1..points.len() {
                let (a, b, c) = (points[i], points[j], points[k]);
                let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
                if cross.abs() < 1.0 {
                    return true;
                }
            }
        }
    }
    false
}

#[derive(Debug, Clone)]
pub struct RansacFit {
    pub transform: Matrix3<f64>,
    pub inliers: Vec<usize>,
    pub affine: bool,
}

/// Seeded random-sample consensus over 4-point projective fits, refit on the
/// consensus set. Falls back to an affine refit when the projective estimate
/// is ill-conditioned.
pub fn ransac_homography(
    src: &[Point],
    dst: &[Point],
    iterations: usize,
    threshold: f64,
    max_condition: f64,
    seed: u64,
) -> Option<RansacFit> {
    let n = src.len();
    if n < 4 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..iterations {
        let pick = sample(&mut rng, n, 4).into_vec();
        let s: Vec<Point> = pick.iter().map(|&i| src[i]).collect();
        let d: Vec<Point> = pick.iter().map(|&i| dst[i]).collect();
        if degenerate(&s) || degenerate(&d) {
            continue;
        }
        let Some(h) = fit_homography(&s, &d) else { continue };
        let inl = inliers(&h, src, dst, threshold);
        if inl.len() > best.len() {
            best = inl;
            if best.len() == n {
                break;
            }
        }
    }
    if best.len() < 4 {
        return None;
    }
    let mut consensus = best;
    let mut transform = Matrix3::identity();
    let mut affine = false;
    for _ in 0..3 {
        let s: Vec<Point> = consensus.iter().map(|&i| src[i]).collect();
        let d: Vec<Point> = consensus.iter().map(|&i| dst[i]).collect();
        let projective = fit_homography(&s, &d).filter(|h| condition_number(h) <= max_condition);
        (transform, affine) = match projective {
            Some(h) => (h, false),
            None => (fit_affine(&s, &d)?, true),
        };
        let next = inliers(&transform, src, dst, threshold);
        if next == consensus || next.len() < 4 {
            break;
        }
        consensus = next;
    }
    Some(RansacFit { transform, inliers: consensus, affine })
}

/// Largest displacement of the image corners under `h` relative to identity.
pub fn corner_displacement(h: &Matrix3<f64>, width: u32, height: u32) -> f64 {
    let (w, h_) = ((width - 1) as f64, (height - 1) as f64);
    [(0.0, 0.0), (w, 0.0), (0.0, h_), (w, h_)]
        .iter()
        .map(|&p| match apply(h, p) {
            Some(q) => ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt(),
            None => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// Resamples `candidate` into the reference frame: `out(p) = candidate(h·p)`,
/// where `h` maps reference coordinates to candidate coordinates. Samples
/// that land outside the candidate are taken from `fill`.
pub fn warp_into(candidate: &RasterImage, h: &Matrix3<f64>, fill: &RasterImage) -> RasterImage {
    let (w, hh) = fill.dims();
    let (cw, ch) = (candidate.width() as f64, candidate.height() as f64);
    RasterImage::from_fn(w, hh, |x, y| match apply(h, (x as f64, y as f64)) {
        Some((u, v)) if u >= -0.5 && v >= -0.5 && u <= cw - 0.5 && v <= ch - 0.5 => {
            candidate.sample_bilinear_clamped(u as f32, v as f32)
        }
        _ => fill.get(x, y),
    })
    .expect("dimensions come from an existing image")
}
