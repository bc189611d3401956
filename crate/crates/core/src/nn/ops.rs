//! Forward and backward kernels for the layer types used by the networks.
//! All tensors are `N×C×H×W`; weights follow the usual
//! `out×in×kh×kw` layout (`in×out×kh×kw` for transposed convolutions).

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stride, zero padding and dilation of a convolution, as `(rows, cols)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvGeom {
    pub const fn new(stride: usize, pad: usize) -> Self {
        Self {
            stride: (stride, stride),
            pad: (pad, pad),
            dilation: (1, 1),
        }
    }

    pub const fn dilated(dilation: usize) -> Self {
        Self {
            stride: (1, 1),
            pad: (dilation, dilation),
            dilation: (dilation, dilation),
        }
    }

    pub fn out_len(len: usize, k: usize, stride: usize, pad: usize, dil: usize) -> Option<usize> {
        let span = dil * (k - 1) + 1;
        let padded = len + 2 * pad;
        (padded >= span).then(|| (padded - span) / stride + 1)
    }
}

/// Range `[lo, hi)` of iteration indices `o < iter_len` such that
/// `o*stride + offset` lands inside `[0, target_len)`.
#[inline]
fn valid_range(target_len: usize, iter_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let last = target_len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last / s + 1).min(iter_len as isize);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// `dst[i] += k * src[i*stride]` over `dst`.
#[inline]
fn axpy_strided<T: Scalar>(dst: &mut [T], src: &[T], stride: usize, k: T) {
    if stride == 1 {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += k * s;
        }
    } else {
        for (i, d) in dst.iter_mut().enumerate() {
            *d += k * src[i * stride];
        }
    }
}

/// `dst[i*stride] += k * src[i]` over `src`.
#[inline]
fn scatter_strided<T: Scalar>(dst: &mut [T], src: &[T], stride: usize, k: T) {
    if stride == 1 {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += k * s;
        }
    } else {
        for (i, &s) in src.iter().enumerate() {
            dst[i * stride] += k * s;
        }
    }
}

#[inline]
fn dot_strided<T: Scalar>(a: &[T], b: &[T], stride: usize) -> T {
    let mut acc = T::zero();
    if stride == 1 {
        for (&x, &y) in a.iter().zip(b) {
            acc += x * y;
        }
    } else {
        for (i, &x) in a.iter().enumerate() {
            acc += x * b[i * stride];
        }
    }
    acc
}

fn check_conv(x: &Tensor<impl Scalar>, w: &Tensor<impl Scalar>, in_axis: usize) -> Result<()> {
    let (_, c, _, _) = x.expect_rank4("convolution input")?;
    if w.shape().len() != 4 {
        bail!(Shape, "convolution weight must be rank 4, got {:?}", w.shape());
    }
    if w.shape()[in_axis] != c {
        bail!(
            Shape,
            "convolution expects {} input channels, got {}",
            w.shape()[in_axis],
            c
        );
    }
    Ok(())
}

pub fn conv2d_output_hw(h: usize, w: usize, kh: usize, kw: usize, g: ConvGeom) -> Option<(usize, usize)> {
    Some((
        ConvGeom::out_len(h, kh, g.stride.0, g.pad.0, g.dilation.0)?,
        ConvGeom::out_len(w, kw, g.stride.1, g.pad.1, g.dilation.1)?,
    ))
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: ConvGeom,
) -> Result<Tensor<T>> {
    check_conv(x, weight, 1)?;
    let (n, ci, h, w) = x.dims4();
    let (co, _, kh, kw) = weight.dims4();
    let Some((ho, wo)) = conv2d_output_hw(h, w, kh, kw, g) else {
        bail!(Shape, "input {h}×{w} is smaller than the {kh}×{kw} kernel span");
    };
    let mut out = Tensor::zeros(&[n, co, ho, wo]);
    let wd = weight.data();
    for b in 0..n {
        for o in 0..co {
            let plane = out.plane_mut(b, o);
            if let Some(bias) = bias {
                plane.fill(bias.data()[o]);
            }
            for i in 0..ci {
                let inp = x.plane(b, i);
                for ky in 0..kh {
                    let offy = (ky * g.dilation.0) as isize - g.pad.0 as isize;
                    let (ylo, yhi) = valid_range(h, ho, g.stride.0, offy);
                    for kx in 0..kw {
                        let k = wd[((o * ci + i) * kh + ky) * kw + kx];
                        let offx = (kx * g.dilation.1) as isize - g.pad.1 as isize;
                        let (xlo, xhi) = valid_range(w, wo, g.stride.1, offx);
                        if xhi == xlo {
                            continue;
                        }
                        for oy in ylo..yhi {
                            let iy = (oy * g.stride.0) as isize + offy;
                            let ix0 = (xlo * g.stride.1) as isize + offx;
                            let src = &inp[iy as usize * w + ix0 as usize..(iy as usize + 1) * w];
                            let dst = &mut plane[oy * wo + xlo..oy * wo + xhi];
                            axpy_strided(dst, src, g.stride.1, k);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution. `grad_in` is skipped when `need_input` is
/// false; parameter gradients are skipped when `param_grads` is false.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    g: ConvGeom,
    grad_out: &Tensor<T>,
    need_input: bool,
    param_grads: bool,
) -> ConvGrads<T> {
    let (n, ci, h, w) = x.dims4();
    let (co, _, kh, kw) = weight.dims4();
    let (_, _, ho, wo) = grad_out.dims4();
    let wd = weight.data();
    let mut gin = need_input.then(|| Tensor::zeros(x.shape()));
    let mut gw = param_grads.then(|| Tensor::zeros(weight.shape()));
    let mut gb = (param_grads && has_bias).then(|| Tensor::zeros(&[co]));
    for b in 0..n {
        for o in 0..co {
            let gplane = grad_out.plane(b, o);
            if let Some(gb) = gb.as_mut() {
                let mut s = T::zero();
                for &v in gplane {
                    s += v;
                }
                gb.data_mut()[o] += s;
            }
            for i in 0..ci {
                let inp = x.plane(b, i);
                for ky in 0..kh {
                    let offy = (ky * g.dilation.0) as isize - g.pad.0 as isize;
                    let (ylo, yhi) = valid_range(h, ho, g.stride.0, offy);
                    for kx in 0..kw {
                        let widx = ((o * ci + i) * kh + ky) * kw + kx;
                        let offx = (kx * g.dilation.1) as isize - g.pad.1 as isize;
                        let (xlo, xhi) = valid_range(w, wo, g.stride.1, offx);
                        if xhi == xlo {
                            continue;
                        }
                        let mut acc = T::zero();
                        for oy in ylo..yhi {
                            let iy = ((oy * g.stride.0) as isize + offy) as usize;
                            let ix0 = ((xlo * g.stride.1) as isize + offx) as usize;
                            let gseg = &gplane[oy * wo + xlo..oy * wo + xhi];
                            if gw.is_some() {
                                acc += dot_strided(gseg, &inp[iy * w + ix0..(iy + 1) * w], g.stride.1);
                            }
                            if let Some(gin) = gin.as_mut() {
                                let dst = &mut gin.plane_mut(b, i)[iy * w + ix0..(iy + 1) * w];
                                scatter_strided(dst, gseg, g.stride.1, wd[widx]);
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw.data_mut()[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    ConvGrads {
        input: gin,
        weight: gw,
        bias: gb,
    }
}

/// Transposed convolution (fractionally strided), weight `in×out×kh×kw`,
/// output side `(len-1)*stride - 2*pad + k`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    check_conv(x, weight, 0)?;
    let (n, ci, h, w) = x.dims4();
    let (_, co, kh, kw) = weight.dims4();
    let ho = ((h - 1) * stride + kh).checked_sub(2 * pad);
    let wo = ((w - 1) * stride + kw).checked_sub(2 * pad);
    let (Some(ho), Some(wo)) = (ho, wo) else {
        bail!(Shape, "transposed convolution output would be empty for {h}×{w}");
    };
    let mut out = Tensor::zeros(&[n, co, ho, wo]);
    let wd = weight.data();
    for b in 0..n {
        for o in 0..co {
            let plane = out.plane_mut(b, o);
            if let Some(bias) = bias {
                plane.fill(bias.data()[o]);
            }
            for i in 0..ci {
                let inp = x.plane(b, i);
                for ky in 0..kh {
                    let offy = ky as isize - pad as isize;
                    let (ylo, yhi) = valid_range(ho, h, stride, offy);
                    for kx in 0..kw {
                        let k = wd[((i * co + o) * kh + ky) * kw + kx];
                        let offx = kx as isize - pad as isize;
                        let (xlo, xhi) = valid_range(wo, w, stride, offx);
                        if xhi == xlo {
                            continue;
                        }
                        for iy in ylo..yhi {
                            let oy = ((iy * stride) as isize + offy) as usize;
                            let ox0 = ((xlo * stride) as isize + offx) as usize;
                            let src = &inp[iy * w + xlo..iy * w + xhi];
                            scatter_strided(&mut plane[oy * wo + ox0..(oy + 1) * wo], src, stride, k);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
    need_input: bool,
    param_grads: bool,
) -> ConvGrads<T> {
    let (n, ci, h, w) = x.dims4();
    let (_, co, kh, kw) = weight.dims4();
    let (_, _, ho, wo) = grad_out.dims4();
    let wd = weight.data();
    let mut gin = need_input.then(|| Tensor::zeros(x.shape()));
    let mut gw = param_grads.then(|| Tensor::zeros(weight.shape()));
    let mut gb = (param_grads && has_bias).then(|| Tensor::zeros(&[co]));
    for b in 0..n {
        for o in 0..co {
            let gplane = grad_out.plane(b, o);
            if let Some(gb) = gb.as_mut() {
                let mut s = T::zero();
                for &v in gplane {
                    s += v;
                }
                gb.data_mut()[o] += s;
            }
            for i in 0..ci {
                let inp = x.plane(b, i);
                for ky in 0..kh {
                    let offy = ky as isize - pad as isize;
                    let (ylo, yhi) = valid_range(ho, h, stride, offy);
                    for kx in 0..kw {
                        let widx = ((i * co + o) * kh + ky) * kw + kx;
                        let offx = kx as isize - pad as isize;
                        let (xlo, xhi) = valid_range(wo, w, stride, offx);
                        if xhi == xlo {
                            continue;
                        }
                        let mut acc = T::zero();
                        for iy in ylo..yhi {
                            let oy = ((iy * stride) as isize + offy) as usize;
                            let ox0 = ((xlo * stride) as isize + offx) as usize;
                            let gseg = &gplane[oy * wo + ox0..(oy + 1) * wo];
                            if gw.is_some() {
                                acc += dot_strided(&inp[iy * w + xlo..iy * w + xhi], gseg, stride);
                            }
                            if let Some(gin) = gin.as_mut() {
                                let dst = &mut gin.plane_mut(b, i)[iy * w + xlo..iy * w + xhi];
                                axpy_strided(dst, gseg, stride, wd[widx]);
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw.data_mut()[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    ConvGrads {
        input: gin,
        weight: gw,
        bias: gb,
    }
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Saved statistics of an instance-normalization forward pass.
pub struct NormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

pub fn instance_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let (n, c, h, w) = x.expect_rank4("instance norm input")?;
    if gamma.len() != c || beta.len() != c {
        bail!(Shape, "instance norm over {c} channels got affine params of length {}", gamma.len());
    }
    let hw = (h * w) as f64;
    let mut out = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let mut mean = T::zero();
            for &v in src {
                mean += v;
            }
            let mean = mean.scale(1.0 / hw);
            let mut var = T::zero();
            for &v in src {
                let d = v - mean;
                var += d * d;
            }
            let var = var.scale(1.0 / hw);
            let is = T::one() / (var + T::from_f64(INSTANCE_NORM_EPS)).sqrt();
            inv_std.push(is);
            let (gm, bt) = (gamma.data()[ch], beta.data()[ch]);
            let xh = xhat.plane_mut(b, ch);
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - mean) * is;
            }
            let xh = xhat.plane(b, ch).to_vec();
            for (d, v) in out.plane_mut(b, ch).iter_mut().zip(xh) {
                *d = v * gm + bt;
            }
        }
    }
    Ok((
        out,
        NormCache {
            normalized: xhat,
            inv_std,
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn instance_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
    param_grads: bool,
) -> (Tensor<T>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let (n, c, h, w) = grad_out.dims4();
    let hw = (h * w) as f64;
    let mut gin = Tensor::zeros(grad_out.shape());
    let mut gg = param_grads.then(|| Tensor::zeros(&[c]));
    let mut gbt = param_grads.then(|| Tensor::zeros(&[c]));
    for b in 0..n {
        for ch in 0..c {
            let dy = grad_out.plane(b, ch);
            let xh = cache.normalized.plane(b, ch);
            let mut sum_dy = T::zero();
            let mut sum_dy_xh = T::zero();
            for (&d, &v) in dy.iter().zip(xh) {
                sum_dy += d;
                sum_dy_xh += d * v;
            }
            if let (Some(gg), Some(gbt)) = (gg.as_mut(), gbt.as_mut()) {
                gg.data_mut()[ch] += sum_dy_xh;
                gbt.data_mut()[ch] += sum_dy;
            }
            let k = gamma.data()[ch] * cache.inv_std[b * c + ch];
            let mean_dy = sum_dy.scale(1.0 / hw);
            let mean_dy_xh = sum_dy_xh.scale(1.0 / hw);
            for ((g, &d), &v) in gin.plane_mut(b, ch).iter_mut().zip(dy).zip(xh) {
                *g = k * (d - mean_dy - v * mean_dy_xh);
            }
        }
    }
    (gin, gg, gbt)
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v.value() > 0.0 { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v.value() > 0.0 { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn leaky_relu_forward<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    x.map(|v| if v.value() > 0.0 { v } else { v.scale(slope) })
}

pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, slope: f64, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v.value() > 0.0 { g } else { g.scale(slope) })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn tanh_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(Scalar::tanh)
}

/// Takes the forward *output* `y = tanh(x)`.
pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&t, &g)| g * (T::one() - t * t))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

/// Mirror index without repeating the edge sample (`[1,0,1,2,..]`).
#[inline]
pub fn reflect_index(i: isize, len: usize) -> usize {
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Padding amounts `(top, bottom, left, right)`.
pub type Pad4 = (usize, usize, usize, usize);

pub fn reflect_pad_forward<T: Scalar>(x: &Tensor<T>, pad: Pad4) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.expect_rank4("reflect pad input")?;
    let (top, bottom, left, right) = pad;
    if top.max(bottom) >= h || left.max(right) >= w {
        bail!(Shape, "reflect padding {pad:?} needs an input larger than {h}×{w}");
    }
    let (ho, wo) = (h + top + bottom, w + left + right);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for oy in 0..ho {
                let iy = reflect_index(oy as isize - top as isize, h);
                for ox in 0..wo {
                    let ix = reflect_index(ox as isize - left as isize, w);
                    dst[oy * wo + ox] = src[iy * w + ix];
                }
            }
        }
    }
    Ok(out)
}

pub fn reflect_pad_backward<T: Scalar>(input_shape: &[usize], pad: Pad4, grad_out: &Tensor<T>) -> Tensor<T> {
    let (top, _, left, _) = pad;
    let (h, w) = (input_shape[2], input_shape[3]);
    let (n, c, ho, wo) = grad_out.dims4();
    let mut gin = Tensor::zeros(input_shape);
    for b in 0..n {
        for ch in 0..c {
            let src = grad_out.plane(b, ch);
            let dst = gin.plane_mut(b, ch);
            for oy in 0..ho {
                let iy = reflect_index(oy as isize - top as isize, h);
                for ox in 0..wo {
                    let ix = reflect_index(ox as isize - left as isize, w);
                    dst[iy * w + ix] += src[oy * wo + ox];
                }
            }
        }
    }
    gin
}

/// 2×2 max pooling with stride 2; returns the output and argmax offsets.
pub fn max_pool2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.expect_rank4("max pool input")?;
    if h < 2 || w < 2 {
        bail!(Shape, "2×2 max pooling needs at least 2×2 input, got {h}×{w}");
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx].value() > src[best].value() {
                            best = idx;
                        }
                    }
                    dst[oy * wo + ox] = src[best];
                    arg.push(best);
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool2_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let (n, c, ho, wo) = grad_out.dims4();
    let mut gin = Tensor::zeros(input_shape);
    let mut k = 0;
    for b in 0..n {
        for ch in 0..c {
            let src = grad_out.plane(b, ch).to_vec();
            let dst = gin.plane_mut(b, ch);
            for &g in src.iter().take(ho * wo) {
                dst[argmax[k]] += g;
                k += 1;
            }
        }
    }
    gin
}

/// Concatenates rank-4 tensors along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let (n, _, h, w) = parts[0].expect_rank4("channel concat")?;
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Tensor::zeros(&[n, total, h, w]);
    for b in 0..n {
        let mut c0 = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.expect_rank4("channel concat")?;
            if (pn, ph, pw) != (n, h, w) {
                bail!(Shape, "channel concat of {:?} with {:?}", p.shape(), parts[0].shape());
            }
            for ch in 0..pc {
                out.plane_mut(b, c0 + ch).copy_from_slice(p.plane(b, ch));
            }
            c0 += pc;
        }
    }
    Ok(out)
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, sizes: &[usize]) -> Vec<Tensor<T>> {
    let (n, _, h, w) = x.dims4();
    let mut parts: Vec<Tensor<T>> = sizes.iter().map(|&c| Tensor::zeros(&[n, c, h, w])).collect();
    for b in 0..n {
        let mut c0 = 0;
        for (p, &c) in parts.iter_mut().zip(sizes) {
            for ch in 0..c {
                p.plane_mut(b, ch).copy_from_slice(x.plane(b, c0 + ch));
            }
            c0 += c;
        }
    }
    parts
}

/// Direct nested-loop reference used in tests.
#[cfg(test)]
pub(crate) fn conv2d_naive(x: &Tensor<f64>, wt: &Tensor<f64>, bias: Option<&Tensor<f64>>, g: ConvGeom) -> Tensor<f64> {
    let (n, ci, h, w) = x.dims4();
    let (co, _, kh, kw) = wt.dims4();
    let (ho, wo) = conv2d_output_hw(h, w, kh, kw, g).unwrap();
    let mut out = alloc::vec![0.0; n * co * ho * wo];
    for b in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = bias.map_or(0.0, |bb| bb.data()[o]);
                    for i in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * g.stride.0 + ky * g.dilation.0) as isize - g.pad.0 as isize;
                                let ix = (ox * g.stride.1 + kx * g.dilation.1) as isize - g.pad.1 as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += x.data()[((b * ci + i) * h + iy as usize) * w + ix as usize]
                                    * wt.data()[((o * ci + i) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * co + o) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, ho, wo], out).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn conv_matches_naive_across_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let geoms = [
            ConvGeom::new(1, 1),
            ConvGeom::new(2, 1),
            ConvGeom::new(1, 0),
            ConvGeom::dilated(3),
            ConvGeom {
                stride: (1, 1),
                pad: (0, 1),
                dilation: (1, 1),
            },
            ConvGeom {
                stride: (2, 1),
                pad: (3, 2),
                dilation: (2, 1),
            },
        ];
        for (gi, g) in geoms.into_iter().enumerate() {
            let x = rand_tensor(&[2, 3, 9, 11], &mut rng);
            let (kh, kw) = if gi == 4 { (1, 3) } else { (3, 3) };
            let wt = rand_tensor(&[4, 3, kh, kw], &mut rng);
            let b = rand_tensor(&[4], &mut rng);
            let fast = conv2d_forward(&x, &wt, Some(&b), g).unwrap();
            let slow = conv2d_naive(&x, &wt, Some(&b), g);
            assert!(max_diff(&fast, &slow) < 1e-12, "geometry {g:?}");
        }
    }

    fn fd_check(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, analytic: &Tensor<f64>) {
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((fd - a).abs() < 1e-6 * (1.0 + a.abs()), "index {i}: fd {fd} vs analytic {a}");
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = ConvGeom {
            stride: (2, 1),
            pad: (1, 2),
            dilation: (1, 2),
        };
        let x = rand_tensor(&[1, 2, 6, 7], &mut rng);
        let wt = rand_tensor(&[3, 2, 3, 3], &mut rng);
        let b = rand_tensor(&[3], &mut rng);
        let y = conv2d_forward(&x, &wt, Some(&b), g).unwrap();
        let r = rand_tensor(y.shape(), &mut rng);
        let dot = |t: &Tensor<f64>| t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
        let grads = conv2d_backward(&x, &wt, true, g, &r, true, true);
        fd_check(|xx| dot(&conv2d_forward(xx, &wt, Some(&b), g).unwrap()), &x, grads.input.as_ref().unwrap());
        fd_check(|ww| dot(&conv2d_forward(&x, ww, Some(&b), g).unwrap()), &wt, grads.weight.as_ref().unwrap());
        fd_check(|bb| dot(&conv2d_forward(&x, &wt, Some(bb), g).unwrap()), &b, grads.bias.as_ref().unwrap());
    }

    #[test]
    fn transposed_conv_doubles_resolution_and_backprops() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor(&[1, 2, 4, 5], &mut rng);
        let wt = rand_tensor(&[2, 3, 4, 4], &mut rng);
        let b = rand_tensor(&[3], &mut rng);
        let y = conv_transpose2d_forward(&x, &wt, Some(&b), 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 8, 10]);
        let r = rand_tensor(y.shape(), &mut rng);
        let dot = |t: &Tensor<f64>| t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
        let grads = conv_transpose2d_backward(&x, &wt, true, 2, 1, &r, true, true);
        fd_check(
            |xx| dot(&conv_transpose2d_forward(xx, &wt, Some(&b), 2, 1).unwrap()),
            &x,
            grads.input.as_ref().unwrap(),
        );
        fd_check(
            |ww| dot(&conv_transpose2d_forward(&x, ww, Some(&b), 2, 1).unwrap()),
            &wt,
            grads.weight.as_ref().unwrap(),
        );
        fd_check(
            |bb| dot(&conv_transpose2d_forward(&x, &wt, Some(bb), 2, 1).unwrap()),
            &b,
            grads.bias.as_ref().unwrap(),
        );
    }

    #[test]
    fn transposed_conv_is_adjoint_of_strided_conv() {
        // <conv(x), y> == <x, conv^T(y)> for matching geometry
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&[1, 3, 8, 8], &mut rng);
        let wt = rand_tensor(&[2, 3, 4, 4], &mut rng);
        let y = rand_tensor(&[1, 2, 4, 4], &mut rng);
        let cx = conv2d_forward(&x, &wt, None, ConvGeom::new(2, 1)).unwrap();
        let ty = conv_transpose2d_forward(&y, &wt, None, 2, 1).unwrap();
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn instance_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_tensor(&[2, 2, 3, 4], &mut rng);
        let gm = rand_tensor(&[2], &mut rng);
        let bt = rand_tensor(&[2], &mut rng);
        let (y, cache) = instance_norm_forward(&x, &gm, &bt).unwrap();
        let r = rand_tensor(y.shape(), &mut rng);
        let dot = |t: &Tensor<f64>| t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
        let (gx, gg, gb) = instance_norm_backward(&cache, &gm, &r, true);
        fd_check(|xx| dot(&instance_norm_forward(xx, &gm, &bt).unwrap().0), &x, &gx);
        fd_check(|g| dot(&instance_norm_forward(&x, g, &bt).unwrap().0), &gm, &gg.unwrap());
        fd_check(|b| dot(&instance_norm_forward(&x, &gm, b).unwrap().0), &bt, &gb.unwrap());
    }

    #[test]
    fn reflect_pad_and_pool_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = rand_tensor(&[1, 2, 5, 6], &mut rng);
        let pad = (2, 1, 3, 0);
        let y = reflect_pad_forward(&x, pad).unwrap();
        assert_eq!(y.shape(), &[1, 2, 8, 9]);
        let r = rand_tensor(y.shape(), &mut rng);
        let dot = |t: &Tensor<f64>, r: &Tensor<f64>| t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
        let g = reflect_pad_backward(x.shape(), pad, &r);
        fd_check(|xx| dot(&reflect_pad_forward(xx, pad).unwrap(), &r), &x, &g);

        let (p, arg) = max_pool2_forward(&x).unwrap();
        assert_eq!(p.shape(), &[1, 2, 2, 3]);
        let r2 = rand_tensor(p.shape(), &mut rng);
        let g2 = max_pool2_backward(x.shape(), &arg, &r2);
        fd_check(|xx| dot(&max_pool2_forward(xx).unwrap().0, &r2), &x, &g2);
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, alloc::vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn concat_split_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let a = rand_tensor(&[2, 1, 3, 3], &mut rng);
        let b = rand_tensor(&[2, 2, 3, 3], &mut rng);
        let c = concat_channels(&[a.clone(), b.clone()]).unwrap();
        let parts = split_channels(&c, &[1, 2]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
