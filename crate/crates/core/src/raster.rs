//! Pixel carriers: normalized RGB images and binary masks, plus the handful
//! of neighborhood operations (morphology, blur, components) the pipelines
//! share.

use std::collections::VecDeque;
use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("image dimensions must be at least 1x1 (got {width}x{height})")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("expected {expected} samples, got {got}")]
    SampleCount { expected: usize, got: usize },
    #[error("intensity {value} at sample {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("image decode failed: {0}")]
    Decode(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Converts a normalized intensity to 8 bits, rounding half up.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn from_u8(v: u8) -> f32 {
    v as f32 / 255.0
}

/// An RGB image with per-channel intensities in `[0, 1]`, stored row-major
/// and interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl RasterImage {
    pub fn filled(width: u32, height: u32, color: [f32; 3]) -> Result<Self, RasterError> {
        check_dims(width, height)?;
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&color.map(|c| c.clamp(0.0, 1.0)));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f32; 3]) -> Result<Self, RasterError> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y).map(|c| c.clamp(0.0, 1.0)));
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<f32>) -> Result<Self, RasterError> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(RasterError::SampleCount { expected, got: data.len() });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(RasterError::OutOfRange { index, value });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn get_index(&self, idx: usize) -> [f32; 3] {
        let i = idx * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let idx = y as usize * self.width as usize + x as usize;
        self.set_index(idx, rgb);
    }

    #[inline]
    pub fn set_index(&mut self, idx: usize, rgb: [f32; 3]) {
        let i = idx * 3;
        self.data[i] = rgb[0].clamp(0.0, 1.0);
        self.data[i + 1] = rgb[1].clamp(0.0, 1.0);
        self.data[i + 2] = rgb[2].clamp(0.0, 1.0);
    }

    /// Snaps every intensity to the nearest 8-bit level so that a PNG round
    /// trip is lossless.
    pub fn quantized(&self) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|&v| from_u8(to_u8(v))).collect() }
    }

    pub fn same_dims(&self, other: &RasterImage) -> Result<(), RasterError> {
        if self.dims() != other.dims() {
            return Err(RasterError::DimensionMismatch { a: self.dims(), b: other.dims() });
        }
        Ok(())
    }

    /// Luma as the plain channel mean.
    pub fn gray(&self) -> Vec<f32> {
        self.data.chunks_exact(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect()
    }

    /// Per-pixel maximum over channels of `|self - other|`.
    pub fn channel_max_abs_diff(&self, other: &RasterImage) -> Vec<f32> {
        debug_assert_eq!(self.dims(), other.dims());
        self.data
            .chunks_exact(3)
            .zip(other.data.chunks_exact(3))
            .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()).max((a[2] - b[2]).abs()))
            .collect()
    }

    /// Mean absolute error over all samples.
    pub fn mean_abs_error(&self, other: &RasterImage) -> f64 {
        let total: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs() as f64).sum();
        total / self.data.len() as f64
    }

    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.data.chunks_exact(3).map(|p| p[c]).collect()
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width, self.height, |x, y| Rgb(self.get(x, y).map(to_u8)))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| from_u8(v)).collect();
        Self { width: img.width(), height: img.height(), data }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        check_dims(img.width(), img.height())?;
        Ok(Self::from_rgb8(&img))
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut out, ImageFormat::Png).expect("PNG encoding into memory cannot fail");
        out.into_inner()
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        std::fs::write(path, self.encode_png())?;
        Ok(())
    }

    /// Bilinear resample to new dimensions.
    pub fn resized(&self, width: u32, height: u32) -> Result<Self, RasterError> {
        check_dims(width, height)?;
        if (width, height) == self.dims() {
            return Ok(self.clone());
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        Self::from_fn(width, height, |x, y| {
            let fx = (x as f32 + 0.5) * sx - 0.5;
            let fy = (y as f32 + 0.5) * sy - 0.5;
            self.sample_bilinear_clamped(fx, fy)
        })
    }

    /// Bilinear sample with edge clamping.
    pub fn sample_bilinear_clamped(&self, fx: f32, fy: f32) -> [f32; 3] {
        let maxx = (self.width - 1) as f32;
        let maxy = (self.height - 1) as f32;
        let fx = fx.clamp(0.0, maxx);
        let fy = fy.clamp(0.0, maxy);
        let x0 = fx.floor() as u32;
        let y0 = fy.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f32;
        let ty = fy - y0 as f32;
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        std::array::from_fn(|k| {
            let top = a[k] + (b[k] - a[k]) * tx;
            let bottom = c[k] + (d[k] - c[k]) * tx;
            top + (bottom - top) * ty
        })
    }

    /// SHA-256 over dimensions and 8-bit samples.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        h.update(&bytes);
        hex::encode(h.finalize())
    }
}

fn check_dims(width: u32, height: u32) -> Result<(), RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::EmptyDimensions { width, height });
    }
    Ok(())
}

/// Full-frame boolean mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![false; width as usize * height as usize] }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![true; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(RasterError::SampleCount { expected, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    /// Axis-aligned rectangle, clipped to the frame.
    pub fn rect(width: u32, height: u32, x: i64, y: i64, w: u32, h: u32) -> Self {
        Self::from_fn(width, height, |px, py| {
            let (px, py) = (px as i64, py as i64);
            px >= x && px < x + w as i64 && py >= y && py < y + h as i64
        })
    }

    /// Filled ellipse sampled at pixel centers.
    pub fn ellipse(width: u32, height: u32, cx: f32, cy: f32, rx: f32, ry: f32) -> Self {
        Self::from_fn(width, height, |px, py| {
            let dx = (px as f32 + 0.5 - cx) / rx.max(1e-6);
            let dy = (py as f32 + 0.5 - cy) / ry.max(1e-6);
            dx * dx + dy * dy <= 1.0
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn get_index(&self, idx: usize) -> bool {
        self.data[idx]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn complement(&self) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|b| !b).collect() }
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Self {
        assert_eq!(self.dims(), other.dims(), "mask dimension mismatch");
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn union(&self, other: &BinaryMask) -> Self {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Self {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &BinaryMask) -> Self {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn union_in_place(&mut self, other: &BinaryMask) {
        assert_eq!(self.dims(), other.dims(), "mask dimension mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    /// `|self ∩ other|` without allocating.
    pub fn intersection_area(&self, other: &BinaryMask) -> usize {
        self.data.iter().zip(&other.data).filter(|(&a, &b)| a && b).count()
    }

    /// `|self \ other|` without allocating.
    pub fn difference_area(&self, other: &BinaryMask) -> usize {
        self.data.iter().zip(&other.data).filter(|(&a, &b)| a && !b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn threshold(width: u32, height: u32, values: &[f32], min: f32) -> Self {
        Self { width, height, data: values.iter().map(|&v| v >= min).collect() }
    }

    pub fn translated(&self, dx: i64, dy: i64) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            let sx = x as i64 - dx;
            let sy = y as i64 - dy;
            sx >= 0 && sy >= 0 && sx < self.width as i64 && sy < self.height as i64 && self.get(sx as u32, sy as u32)
        })
    }

    pub fn dilate(&self, radius: u32) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let offsets = square_offsets(radius);
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = vec![false; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                if !self.data[(y * w + x) as usize] {
                    continue;
                }
                for &(dx, dy) in &offsets {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h {
                        out[(ny * w + nx) as usize] = true;
                    }
                }
            }
        }
        Self { width: self.width, height: self.height, data: out }
    }

    /// Erosion with a square; neighbors outside the frame do not constrain.
    pub fn erode(&self, radius: u32) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let offsets = square_offsets(radius);
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = vec![false; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                if !self.data[(y * w + x) as usize] {
                    continue;
                }
                out[(y * w + x) as usize] = offsets.iter().all(|&(dx, dy)| {
                    let (nx, ny) = (x + dx, y + dy);
                    nx < 0 || ny < 0 || nx >= w || ny >= h || self.data[(ny * w + nx) as usize]
                });
            }
        }
        Self { width: self.width, height: self.height, data: out }
    }

    pub fn open(&self, radius: u32) -> Self {
        self.erode(radius).dilate(radius)
    }

    /// 8-connected components, each as a list of flat indices.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut seen = vec![false; self.data.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.data.len() {
            if !self.data[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut comp = Vec::new();
            while let Some(i) = queue.pop_front() {
                comp.push(i);
                let (x, y) = ((i as i64) % w, (i as i64) / w);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let j = (ny * w + nx) as usize;
                        if self.data[j] && !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    pub fn drop_small_components(&self, min_area: usize) -> Self {
        if min_area <= 1 {
            return self.clone();
        }
        let mut out = Self::empty(self.width, self.height);
        for comp in self.components() {
            if comp.len() >= min_area {
                for i in comp {
                    out.data[i] = true;
                }
            }
        }
        out
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([if self.get(x, y) { 255 } else { 0 }]))
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.to_gray8().write_to(&mut out, ImageFormat::Png).expect("PNG encoding into memory cannot fail");
        out.into_inner()
    }

    /// Decodes any image and thresholds its luma at 128.
    pub fn decode(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory(bytes)?.to_luma8();
        check_dims(img.width(), img.height())?;
        let data = img.as_raw().iter().map(|&v| v >= 128).collect();
        Ok(Self { width: img.width(), height: img.height(), data })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        std::fs::write(path, self.encode_png())?;
        Ok(())
    }
}

/// Offsets of the `(2r+1)`-square structuring element. Squares keep
/// axis-aligned rectangles intact under opening.
pub fn square_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect()
}

/// Normalized 1-D Gaussian taps covering offsets strictly inside `3σ`, so a
/// pixel `3σ` or more away from all support receives exactly zero weight.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = ((3.0 * sigma).ceil() as i64 - 1).max(0);
    let mut k: Vec<f32> = (-radius..=radius).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur of a single plane with edge replication.
pub fn blur_plane(plane: &[f32], width: u32, height: u32, sigma: f32) -> Vec<f32> {
    let kernel = gaussian_kernel(sigma);
    if kernel.len() == 1 {
        return plane.to_vec();
    }
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (width as i64, height as i64);
    let mut tmp = vec![0.0f32; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wt) in kernel.iter().enumerate() {
                let sx = (x + k as i64 - r).clamp(0, w - 1);
                acc += wt * plane[(y * w + sx) as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0f32; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wt) in kernel.iter().enumerate() {
                let sy = (y + k as i64 - r).clamp(0, h - 1);
                acc += wt * tmp[(sy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Central-difference gradient magnitude of one plane (one-sided at borders).
pub fn gradient_magnitude(plane: &[f32], width: u32, height: u32) -> Vec<f32> {
    let (w, h) = (width as usize, height as usize);
    let mut out = vec![0.0f32; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let gx = if xr > xl { (plane[y * w + xr] - plane[y * w + xl]) / (xr - xl) as f32 } else { 0.0 };
            let gy = if yd > yu { (plane[yd * w + x] - plane[yu * w + x]) / (yd - yu) as f32 } else { 0.0 };
            out[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Channel-max gradient magnitude of an RGB image.
pub fn color_gradient_magnitude(img: &RasterImage) -> Vec<f32> {
    let (w, h) = img.dims();
    let mut out = vec![0.0f32; img.pixel_count()];
    for c in 0..3 {
        let g = gradient_magnitude(&img.channel(c), w, h);
        for (o, v) in out.iter_mut().zip(g) {
            *o = o.max(v);
        }
    }
    out
}
