//! Change masking, local color matching and feathered compositing.

use crate::raster::{blur_plane, color_gradient_magnitude, BinaryMask, RasterImage};

use super::LocalizationParams;

const BINS: usize = 256;

/// Pixels where the edge-discounted difference reaches `diff_threshold`,
/// opened and stripped of small components.
pub fn gradient_weighted_diff_mask(
    reference: &RasterImage,
    warped: &RasterImage,
    params: &LocalizationParams,
) -> BinaryMask {
    let (w, h) = reference.dims();
    let d = reference.channel_max_abs_diff(warped);
    let g = color_gradient_magnitude(reference);
    let weighted: Vec<f32> = d.iter().zip(&g).map(|(d, g)| d / (1.0 + params.gradient_weight * g)).collect();
    BinaryMask::threshold(w, h, &weighted, params.diff_threshold)
        .open(params.morph_open_radius)
        .drop_small_components(params.min_component_area)
}

/// Outcome of [`match_local_histogram`].
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramMatch {
    pub image: RasterImage,
    /// Set when the annulus around the mask is empty and nothing was done.
    pub annulus_empty: bool,
}

fn bin_of(v: f32) -> usize {
    crate::raster::to_u8(v) as usize
}

/// CDF with uniform density inside each bin, so it is continuous and
/// piecewise linear between the bin edges `(b - 0.5) / 255` and
/// `(b + 0.5) / 255`.
struct BinnedCdf {
    /// `cum[b]` is the mass strictly below bin `b`; `cum[BINS]` is 1.
    cum: [f64; BINS + 1],
}

impl BinnedCdf {
    fn new(values: impl Iterator<Item = f32>) -> Option<Self> {
        let mut counts = [0u64; BINS];
        let mut n = 0u64;
        for v in values {
            counts[bin_of(v)] += 1;
            n += 1;
        }
        if n == 0 {
            return None;
        }
        let mut cum = [0.0f64; BINS + 1];
        for b in 0..BINS {
            cum[b + 1] = cum[b] + counts[b] as f64 / n as f64;
        }
        cum[BINS] = 1.0;
        Some(Self { cum })
    }

    fn eval(&self, v: f32) -> f64 {
        let b = bin_of(v);
        let lo = (b as f64 - 0.5) / 255.0;
        let frac = ((v as f64 - lo) * 255.0).clamp(0.0, 1.0);
        self.cum[b] + frac * (self.cum[b + 1] - self.cum[b])
    }

    /// Smallest intensity whose CDF reaches `q`; always inside a populated
    /// bin.
    fn inverse(&self, q: f64) -> f32 {
        let q = q.clamp(0.0, 1.0);
        // First bin with mass whose upper cumulative value reaches q.
        let mut b = 0;
        while b < BINS - 1 && (self.cum[b + 1] < q || self.cum[b + 1] == self.cum[b]) {
            b += 1;
        }
        let mass = self.cum[b + 1] - self.cum[b];
        // Bin edges round up into the next bin, so stay just below the top.
        let frac = if mass > 0.0 { ((q - self.cum[b]) / mass).clamp(0.0, 0.999) } else { 0.5 };
        (((b as f64 - 0.5 + frac) / 255.0).clamp(0.0, 1.0)) as f32
    }
}

/// Remaps warped pixels inside `mask`, per channel, so their distribution
/// follows the reference pixels in the ring `dilate(mask, dilation) \ mask`.
pub fn match_local_histogram(
    reference: &RasterImage,
    warped: &RasterImage,
    mask: &BinaryMask,
    dilation_radius: u32,
) -> HistogramMatch {
    if mask.is_empty() {
        return HistogramMatch { image: warped.clone(), annulus_empty: false };
    }
    let ring = mask.dilate(dilation_radius).difference(mask);
    if ring.is_empty() {
        tracing::warn!("histogram matching skipped: empty annulus");
        return HistogramMatch { image: warped.clone(), annulus_empty: true };
    }
    let inside: Vec<usize> = (0..mask.data().len()).filter(|&i| mask.get_index(i)).collect();
    let annulus: Vec<usize> = (0..ring.data().len()).filter(|&i| ring.get_index(i)).collect();
    let mut out = warped.clone();
    for c in 0..3 {
        let source = BinnedCdf::new(inside.iter().map(|&i| warped.get_index(i)[c])).expect("mask is non-empty");
        let target = BinnedCdf::new(annulus.iter().map(|&i| reference.get_index(i)[c])).expect("annulus is non-empty");
        for &i in &inside {
            let mut px = out.get_index(i);
            px[c] = target.inverse(source.eval(px[c]));
            out.set_index(i, px);
        }
    }
    HistogramMatch { image: out, annulus_empty: false }
}

/// Opacity map: the mask itself at full strength, with a Gaussian feather
/// outside it.
pub fn alpha_map(mask: &BinaryMask, sigma: f32) -> Vec<f32> {
    let (w, h) = mask.dims();
    let blurred = blur_plane(&mask.to_f32(), w, h, sigma);
    blurred.iter().zip(mask.data()).map(|(&b, &m)| if m { 1.0 } else { b.clamp(0.0, 1.0) }).collect()
}

/// `α·adjusted + (1 − α)·reference`; pixels with `α = 0` are copied from
/// the reference untouched.
pub fn blend_edit(
    reference: &RasterImage,
    adjusted: &RasterImage,
    mask: &BinaryMask,
    feather_sigma: f32,
) -> RasterImage {
    let alpha = alpha_map(mask, feather_sigma);
    let mut out = reference.clone();
    for (i, &a) in alpha.iter().enumerate() {
        if a <= 0.0 {
            continue;
        }
        let r = reference.get_index(i);
        let s = adjusted.get_index(i);
        out.set_index(i, std::array::from_fn(|c| a * s[c] + (1.0 - a) * r[c]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LocalizationParams {
        LocalizationParams::default()
    }

    #[test]
    fn identical_images_give_empty_mask() {
        let img = RasterImage::from_fn(16, 16, |x, y| [x as f32 / 16.0, y as f32 / 16.0, 0.2]).unwrap();
        assert!(gradient_weighted_diff_mask(&img, &img, &params()).is_empty());
    }

    #[test]
    fn faint_single_pixel_change_is_ignored() {
        let a = RasterImage::filled(16, 16, [0.5; 3]).unwrap();
        let mut b = a.clone();
        b.set(8, 8, [0.55; 3]);
        assert!(gradient_weighted_diff_mask(&a, &b, &params()).is_empty());
    }

    #[test]
    fn strong_edges_discount_differences() {
        // A 0.15 change next to a hard edge is suppressed, the same change
        // on a flat area is kept.
        let a = RasterImage::from_fn(32, 32, |x, _| if x < 16 { [0.1; 3] } else { [0.9; 3] }).unwrap();
        let mut b = a.clone();
        for y in 0..32 {
            for x in 14..18 {
                let v = a.get(x, y)[0];
                b.set(x, y, [v + 0.15 * if v < 0.5 { 1.0 } else { -1.0 }; 3]);
            }
        }
        let edge = gradient_weighted_diff_mask(&a, &b, &params());
        assert!(edge.is_empty());
        let flat = RasterImage::filled(32, 32, [0.1; 3]).unwrap();
        let mut shifted = flat.clone();
        for y in 0..32 {
            for x in 14..18 {
                shifted.set(x, y, [0.25; 3]);
            }
        }
        assert_eq!(gradient_weighted_diff_mask(&flat, &shifted, &params()).area(), 128);
    }

    #[test]
    fn empty_mask_leaves_histogram_alone() {
        let a = RasterImage::filled(8, 8, [0.3; 3]).unwrap();
        let r = match_local_histogram(&a, &a, &BinaryMask::empty(8, 8), 5);
        assert_eq!(r.image, a);
        assert!(!r.annulus_empty);
    }

    #[test]
    fn full_mask_reports_empty_annulus() {
        let a = RasterImage::filled(8, 8, [0.3; 3]).unwrap();
        let b = RasterImage::filled(8, 8, [0.7; 3]).unwrap();
        let r = match_local_histogram(&a, &b, &BinaryMask::full(8, 8), 5);
        assert_eq!(r.image, b);
        assert!(r.annulus_empty);
    }

    #[test]
    fn constant_region_takes_ring_color() {
        let reference = RasterImage::filled(20, 20, [0.2, 0.4, 0.6]).unwrap();
        let warped = RasterImage::filled(20, 20, [0.9, 0.9, 0.1]).unwrap();
        let mask = BinaryMask::rect(20, 20, 5, 5, 6, 6);
        let r = match_local_histogram(&reference, &warped, &mask, 5);
        let px = r.image.quantized().get(7, 7);
        assert_eq!(px, reference.quantized().get(7, 7));
        assert_eq!(r.image.get(0, 0), warped.get(0, 0));
    }

    #[test]
    fn inverse_cdf_never_lands_in_empty_bins() {
        let cdf = BinnedCdf::new([0.0f32, 1.0].into_iter()).unwrap();
        for k in 0..=100 {
            let v = cdf.inverse(k as f64 / 100.0);
            let b = bin_of(v);
            assert!(b == 0 || b == 255, "{v}");
        }
    }

    #[test]
    fn blend_with_empty_mask_is_reference() {
        let a = RasterImage::filled(8, 8, [0.3; 3]).unwrap();
        let b = RasterImage::filled(8, 8, [0.7; 3]).unwrap();
        assert_eq!(blend_edit(&a, &b, &BinaryMask::empty(8, 8), 2.0), a);
        assert_eq!(blend_edit(&a, &b, &BinaryMask::full(8, 8), 0.0), b);
    }

    #[test]
    fn feather_stays_inside_three_sigma() {
        let a = RasterImage::filled(40, 40, [0.1; 3]).unwrap();
        let b = RasterImage::filled(40, 40, [0.9; 3]).unwrap();
        let mask = BinaryMask::rect(40, 40, 15, 15, 10, 10);
        let out = blend_edit(&a, &b, &mask, 2.0);
        let near = mask.dilate(5);
        for y in 0..40 {
            for x in 0..40 {
                if mask.get(x, y) {
                    assert_eq!(out.get(x, y), b.get(x, y));
                } else if !near.get(x, y) {
                    assert_eq!(out.get(x, y), a.get(x, y));
                }
            }
        }
        // Feathering does reach just outside the box.
        assert!(out.get(25, 20)[0] > 0.1);
    }
}
