//! Synthetic linear motion blur: point-spread-function construction and the
//! forward model `blurred = clamp(kernel ⊛ sharp + noise)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::error::{bail, Result};
use crate::image::{Image, ValueRange};
use crate::nn::ops::reflect_index;
use crate::rng::{self, Purpose};

/// Normalized square point-spread function.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    size: usize,
    weights: Vec<f64>,
    pub length_px: usize,
    pub angle_deg: f64,
}

impl BlurKernel {
    /// Wraps explicit weights; they must be a non-negative odd-sided square
    /// summing to 1.
    pub fn from_weights(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || weights.len() != size * size {
            bail!(Param, "kernel must be an odd-sided square, got side {size} with {} weights", weights.len());
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            bail!(Param, "kernel weights must be finite and non-negative");
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            bail!(Param, "kernel weights sum to {sum}, expected 1");
        }
        Ok(Self {
            size,
            weights,
            length_px: size,
            angle_deg: 0.0,
        })
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
            length_px: 1,
            angle_deg: 0.0,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }
}

fn snap(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        0.0
    } else {
        v
    }
}

/// Straight-line motion kernel of `length_px` unit-spaced samples through
/// the kernel center, bilinearly splatted and normalized.
///
/// Angles are counter-clockwise degrees with rows growing downward. A
/// segment is its own 180° rotation, so the angle is reduced modulo 180 and
/// the sample set is oriented along the canonical direction in `[0°, 180°)`;
/// even lengths are shifted half a pixel along that direction so samples
/// fall on pixel centers for axis-aligned angles. The side is the smallest
/// odd integer `≥ length_px + 2`; a length of 1 gives the 1×1 identity.
pub fn make_motion_kernel(length_px: usize, angle_deg: f64) -> Result<BlurKernel> {
    if length_px == 0 {
        bail!(Param, "blur length must be at least 1 pixel");
    }
    if !angle_deg.is_finite() {
        bail!(Param, "blur angle must be finite, got {angle_deg}");
    }
    if length_px == 1 {
        return Ok(BlurKernel {
            angle_deg,
            ..BlurKernel::identity()
        });
    }
    let mut phi = angle_deg % 180.0;
    if phi < 0.0 {
        phi += 180.0;
    }
    let rad = phi * core::f64::consts::PI / 180.0;
    let (dx, dy) = (snap(libm::cos(rad)), snap(-libm::sin(rad)));
    let size = (length_px + 2) | 1;
    let center = (size / 2) as f64;
    let shift = if length_px % 2 == 0 { 0.5 } else { 0.0 };
    let half = (length_px as f64 - 1.0) / 2.0;
    let mut weights = vec![0.0; size * size];
    for i in 0..length_px {
        let t = i as f64 - half + shift;
        let (x, y) = (center + t * dx, center + t * dy);
        let (x0, y0) = (libm::floor(x), libm::floor(y));
        let (fx, fy) = (x - x0, y - y0);
        for (oy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (ox, wx) in [(0, 1.0 - fx), (1, fx)] {
                let w = wx * wy;
                if w == 0.0 {
                    continue;
                }
                let (col, row) = (x0 as isize + ox, y0 as isize + oy);
                debug_assert!(col >= 0 && row >= 0 && (col as usize) < size && (row as usize) < size);
                weights[row as usize * size + col as usize] += w;
            }
        }
    }
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(BlurKernel {
        size,
        weights,
        length_px,
        angle_deg,
    })
}

/// `clamp(kernel ⊛ sharp + N(0, σ²), 0, 1)` with reflect padding and
/// same-size output. Noise is drawn in raster order from a stream keyed by
/// `seed`; `σ = 0` adds nothing.
pub fn apply_blur(sharp: &Image, kernel: &BlurKernel, noise_sigma: f64, seed: u64) -> Result<Image> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        bail!(Param, "noise sigma must be finite and non-negative, got {noise_sigma}");
    }
    if sharp.range() != ValueRange::Unit {
        bail!(Param, "blur expects a [0,1] image");
    }
    let (w, h) = (sharp.width(), sharp.height());
    let k = kernel.size();
    if k > w || k > h {
        bail!(Param, "{k}×{k} kernel is larger than the {w}×{h} image");
    }
    let r = (k / 2) as isize;
    let mut out = vec![0.0; w * h * 3];
    let src = sharp.pixels();
    for kr in 0..k {
        for kc in 0..k {
            let wt = kernel.at(kr, kc);
            if wt == 0.0 {
                continue;
            }
            // out(x, y) += K(kr, kc) · in(x - (kc - r), y - (kr - r))
            let (sx, sy) = (kc as isize - r, kr as isize - r);
            let cols: Vec<usize> = (0..w).map(|x| reflect_index(x as isize - sx, w)).collect();
            for y in 0..h {
                let ry = reflect_index(y as isize - sy, h);
                let row_out = &mut out[y * w * 3..(y + 1) * w * 3];
                let row_in = &src[ry * w * 3..(ry + 1) * w * 3];
                for (x, &cx) in cols.iter().enumerate() {
                    for c in 0..3 {
                        row_out[x * 3 + c] += wt * row_in[cx * 3 + c];
                    }
                }
            }
        }
    }
    if noise_sigma > 0.0 {
        let mut rng = rng::stream(seed, Purpose::BlurNoise, 0);
        for v in &mut out {
            *v += noise_sigma * rng::normal(&mut rng);
        }
    }
    let mut img = Image::new(w, h, ValueRange::Unit, out)?;
    img.clamp();
    Ok(img)
}

/// Distribution of synthetic blur parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurParams {
    pub length_min: usize,
    pub length_max: usize,
    pub angle_min: f64,
    pub angle_max: f64,
    pub noise_sigma: f64,
}

impl Default for BlurParams {
    fn default() -> Self {
        Self {
            length_min: 16,
            length_max: 40,
            angle_min: 0.0,
            angle_max: 360.0,
            noise_sigma: 0.01,
        }
    }
}

/// Blur settings drawn for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurDraw {
    pub length_px: usize,
    pub angle_deg: f64,
    /// Seed of the image's noise stream.
    pub seed: u64,
}

impl BlurParams {
    pub fn validate(&self) -> Result<()> {
        if self.length_min < 1 || self.length_min > self.length_max {
            bail!(Param, "need 1 ≤ length_min ≤ length_max, got {}..{}", self.length_min, self.length_max);
        }
        if !(self.angle_min <= self.angle_max) || !self.angle_min.is_finite() || !self.angle_max.is_finite() {
            bail!(Param, "angle range [{}, {}) is invalid", self.angle_min, self.angle_max);
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            bail!(Param, "noise sigma must be non-negative, got {}", self.noise_sigma);
        }
        Ok(())
    }

    /// Length uniform over the integers `[length_min, length_max]`, angle
    /// uniform over `[angle_min, angle_max)`, for image `index` of a run
    /// seeded with `seed`.
    pub fn draw(&self, seed: u64, index: u64) -> Result<BlurDraw> {
        self.validate()?;
        let mut rng = rng::stream(seed, Purpose::BlurSample, index);
        let length_px = rng.random_range(self.length_min..=self.length_max);
        let angle_deg = if self.angle_max > self.angle_min {
            rng.random_range(self.angle_min..self.angle_max)
        } else {
            self.angle_min
        };
        Ok(BlurDraw {
            length_px,
            angle_deg,
            seed: rng.next_u64(),
        })
    }
}
