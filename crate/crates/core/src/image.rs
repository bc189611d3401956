//! `H×W×3` floating-point images and the geometric helpers used by the
//! blur, training and evaluation pipelines.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Declared value interval of an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueRange {
    /// `[0, 1]`: file and blur domain.
    Unit,
    /// `[-1, 1]`: network domain.
    Signed,
}

impl ValueRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Signed => (-1.0, 1.0),
        }
    }
}

/// Interleaved RGB image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    range: ValueRange,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, range: ValueRange, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            bail!(Shape, "image sides must be at least 1, got {width}×{height}");
        }
        if pixels.len() != width * height * 3 {
            bail!(Shape, "{width}×{height}×3 image needs {} values, got {}", width * height * 3, pixels.len());
        }
        Ok(Self {
            width,
            height,
            range,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, range: ValueRange, value: f64) -> Result<Self> {
        Self::new(width, height, range, vec![value; width * height * 3])
    }

    /// Builds an image from a per-pixel function `f(x, y, channel)`.
    pub fn from_fn(width: usize, height: usize, range: ValueRange, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut px = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    px.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, range, px)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn clamp(&mut self) {
        let (lo, hi) = self.range.bounds();
        for v in &mut self.pixels {
            *v = v.clamp(lo, hi);
        }
    }

    /// Affine remap between `[0,1]` and `[-1,1]`.
    pub fn to_range(&self, range: ValueRange) -> Image {
        let pixels = match (self.range, range) {
            (a, b) if a == b => self.pixels.clone(),
            (ValueRange::Unit, ValueRange::Signed) => self.pixels.iter().map(|v| v * 2.0 - 1.0).collect(),
            (ValueRange::Signed, ValueRange::Unit) => self.pixels.iter().map(|v| (v + 1.0) * 0.5).collect(),
            _ => unreachable!(),
        };
        Image { pixels, range, ..*self }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            bail!(Shape, "crop {w}×{h}+{x0}+{y0} outside {}×{}", self.width, self.height);
        }
        let mut px = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * 3;
            px.extend_from_slice(&self.pixels[row..row + w * 3]);
        }
        Image::new(w, h, self.range, px)
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.width, self.height, self.range, |x, y, c| self.get(self.width - 1 - x, y, c))
            .expect("same size")
    }

    pub fn flip_vertical(&self) -> Image {
        Image::from_fn(self.width, self.height, self.range, |x, y, c| self.get(x, self.height - 1 - y, c))
            .expect("same size")
    }

    /// Reflect-pads on the bottom and right edges only.
    pub fn pad_reflect(&self, bottom: usize, right: usize) -> Result<Image> {
        if bottom >= self.height.max(2) || right >= self.width.max(2) {
            bail!(Shape, "reflect pad of {bottom}/{right} needs a larger {}×{} image", self.width, self.height);
        }
        let (w, h) = (self.width, self.height);
        Image::from_fn(w + right, h + bottom, self.range, |x, y, c| {
            let rx = crate::nn::ops::reflect_index(x as isize, w);
            let ry = crate::nn::ops::reflect_index(y as isize, h);
            self.get(rx, ry, c)
        })
    }

    /// Bicubic (Catmull-Rom, `a = -0.5`) resampling with clamped borders,
    /// pixel-center aligned.
    pub fn resize_bicubic(&self, new_w: usize, new_h: usize) -> Result<Image> {
        if new_w == 0 || new_h == 0 {
            bail!(Shape, "resize target must be non-empty");
        }
        let cubic = |t: f64| {
            let a = -0.5;
            let t = t.abs();
            if t <= 1.0 {
                (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
            } else if t < 2.0 {
                a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
            } else {
                0.0
            }
        };
        let taps = |out_len: usize, in_len: usize| -> Vec<([usize; 4], [f64; 4])> {
            let scale = in_len as f64 / out_len as f64;
            (0..out_len)
                .map(|o| {
                    let src = (o as f64 + 0.5) * scale - 0.5;
                    let base = libm::floor(src);
                    let frac = src - base;
                    let mut idx = [0usize; 4];
                    let mut wt = [0.0; 4];
                    for k in 0..4 {
                        let i = base as isize - 1 + k as isize;
                        idx[k] = i.clamp(0, in_len as isize - 1) as usize;
                        wt[k] = cubic(frac - (k as f64 - 1.0));
                    }
                    (idx, wt)
                })
                .collect()
        };
        let xt = taps(new_w, self.width);
        let yt = taps(new_h, self.height);
        // horizontal pass
        let mut tmp = vec![0.0; new_w * self.height * 3];
        for y in 0..self.height {
            for (x, (idx, wt)) in xt.iter().enumerate() {
                for c in 0..3 {
                    tmp[(y * new_w + x) * 3 + c] = (0..4).map(|k| wt[k] * self.get(idx[k], y, c)).sum();
                }
            }
        }
        let mut out = vec![0.0; new_w * new_h * 3];
        for (y, (idx, wt)) in yt.iter().enumerate() {
            for x in 0..new_w {
                for c in 0..3 {
                    out[(y * new_w + x) * 3 + c] = (0..4).map(|k| wt[k] * tmp[(idx[k] * new_w + x) * 3 + c]).sum();
                }
            }
        }
        let mut img = Image::new(new_w, new_h, self.range, out)?;
        img.clamp();
        Ok(img)
    }

    /// Planar `1×3×H×W` tensor holding the pixel values unchanged.
    pub fn to_tensor(&self) -> Tensor<f64> {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0.0; 3 * w * h];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = px[c];
            }
        }
        Tensor::from_vec(&[1, 3, h, w], data).expect("consistent shape")
    }

    /// Inverse of [`Image::to_tensor`] for sample `n` of a batch.
    pub fn from_tensor(t: &Tensor<f64>, n: usize, range: ValueRange) -> Result<Image> {
        let (_, c, h, w) = t.expect_rank4("image tensor")?;
        if c != 3 {
            bail!(Shape, "image tensors need 3 channels, got {c}");
        }
        let mut px = vec![0.0; 3 * w * h];
        for ch in 0..3 {
            for (i, &v) in t.plane(n, ch).iter().enumerate() {
                px[i * 3 + ch] = v;
            }
        }
        Image::new(w, h, range, px)
    }
}

/// Stacks same-sized images into an `N×3×H×W` batch, remapped to `range`.
pub fn batch_tensor(images: &[&Image], range: ValueRange) -> Result<Tensor<f64>> {
    let parts: Vec<Tensor<f64>> = images.iter().map(|im| im.to_range(range).to_tensor()).collect();
    Tensor::concat_batch(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coords(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, ValueRange::Unit, |x, y, c| (x * 1000 + y * 10 + c) as f64).unwrap()
    }

    #[test]
    fn tensor_round_trip_and_range_maps() {
        let im = Image::from_fn(5, 3, ValueRange::Unit, |x, y, c| (x + 2 * y + c) as f64 / 12.0).unwrap();
        let back = Image::from_tensor(&im.to_tensor(), 0, ValueRange::Unit).unwrap();
        assert_eq!(back, im);
        let rt = im.to_range(ValueRange::Signed).to_range(ValueRange::Unit);
        for (a, b) in rt.pixels().iter().zip(im.pixels()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn crops_and_flips_move_coordinates() {
        let im = coords(6, 4);
        let c = im.crop(2, 1, 3, 2).unwrap();
        assert_eq!(c.get(0, 0, 1), 2011.0);
        assert_eq!(c.flip_horizontal().get(0, 0, 0), 4010.0);
        assert_eq!(c.flip_vertical().get(0, 0, 2), 2022.0);
        assert!(im.crop(4, 0, 3, 1).is_err());
    }

    #[test]
    fn bicubic_preserves_constants_and_identity_scale() {
        let im = Image::filled(7, 5, ValueRange::Unit, 0.3).unwrap();
        let up = im.resize_bicubic(16, 11).unwrap();
        assert!(up.pixels().iter().all(|v| (v - 0.3).abs() < 1e-12));
        let g = Image::from_fn(6, 6, ValueRange::Unit, |x, y, _| (x * y) as f64 / 25.0).unwrap();
        let same = g.resize_bicubic(6, 6).unwrap();
        for (a, b) in same.pixels().iter().zip(g.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reflect_pad_mirrors_interior() {
        let im = coords(4, 3);
        let p = im.pad_reflect(2, 1).unwrap();
        assert_eq!((p.width(), p.height()), (5, 5));
        assert_eq!(p.get(4, 0, 0), im.get(2, 0, 0));
        assert_eq!(p.get(0, 4, 0), im.get(0, 0, 0));
    }
}
