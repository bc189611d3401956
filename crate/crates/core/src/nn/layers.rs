use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::ops::{self, ConvGeom, NormCache, Pad4};
use super::params::Params;
use crate::error::Result;
use crate::rng::normal;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One step of a feed-forward layer plan. Parameterized layers own a name
/// prefix; their tensors live in a [`Params`] map as `<name>.weight` and
/// `<name>.bias`.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv {
        name: String,
        in_c: usize,
        out_c: usize,
        kernel: (usize, usize),
        geom: ConvGeom,
    },
    ConvTranspose {
        name: String,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    InstanceNorm {
        name: String,
        channels: usize,
    },
    Relu,
    LeakyRelu(f64),
    Tanh,
    ReflectPad(usize),
    MaxPool2,
}

/// What a layer keeps from its forward pass for the backward pass.
pub enum Cache<T> {
    Input(Tensor<T>),
    Norm(NormCache<T>),
    Output(Tensor<T>),
    Shape(Vec<usize>),
    Pool(Vec<usize>, Vec<usize>),
}

fn wname(name: &str) -> String {
    format!("{name}.weight")
}

fn bname(name: &str) -> String {
    format!("{name}.bias")
}

impl Layer {
    pub fn conv(name: &str, in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        Layer::Conv {
            name: name.into(),
            in_c,
            out_c,
            kernel: (k, k),
            geom: ConvGeom::new(stride, pad),
        }
    }

    pub fn norm(name: &str, channels: usize) -> Self {
        Layer::InstanceNorm {
            name: name.into(),
            channels,
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            Layer::Conv { name, .. } | Layer::ConvTranspose { name, .. } | Layer::InstanceNorm { name, .. } => Some(name),
            _ => None,
        }
    }

    /// `(tensor name, shape)` of every learnable tensor.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Layer::Conv {
                name,
                in_c,
                out_c,
                kernel: (kh, kw),
                ..
            } => vec![(wname(name), vec![*out_c, *in_c, *kh, *kw]), (bname(name), vec![*out_c])],
            Layer::ConvTranspose {
                name,
                in_c,
                out_c,
                kernel,
                ..
            } => vec![(wname(name), vec![*in_c, *out_c, *kernel, *kernel]), (bname(name), vec![*out_c])],
            Layer::InstanceNorm { name, channels } => {
                vec![(wname(name), vec![*channels]), (bname(name), vec![*channels])]
            }
            _ => Vec::new(),
        }
    }

    /// Fan-in scaled Gaussian weights (`std = sqrt(2 / fan_in)`), zero
    /// biases, unit/zero normalization affine parameters.
    pub fn init_params(&self, params: &mut Params<f64>, rng: &mut impl Rng) -> Result<()> {
        for (pname, shape) in self.param_shapes() {
            let n: usize = shape.iter().product();
            let data = match self {
                Layer::InstanceNorm { .. } if pname.ends_with(".weight") => vec![1.0; n],
                Layer::Conv { in_c, kernel: (kh, kw), .. } if pname.ends_with(".weight") => {
                    let std = libm::sqrt(2.0 / (in_c * kh * kw) as f64);
                    (0..n).map(|_| std * normal(rng)).collect()
                }
                Layer::ConvTranspose { in_c, kernel, stride, .. } if pname.ends_with(".weight") => {
                    // each output pixel sees roughly in_c·k²/stride² taps
                    let fan_in = (in_c * kernel * kernel) as f64 / (stride * stride) as f64;
                    let std = libm::sqrt(2.0 / fan_in);
                    (0..n).map(|_| std * normal(rng)).collect()
                }
                _ => vec![0.0; n],
            };
            params.insert(&pname, Tensor::from_vec(&shape, data)?)?;
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, p: &Params<T>, x: Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        Ok(match self {
            Layer::Conv { name, geom, .. } => {
                let y = ops::conv2d_forward(&x, p.get(&wname(name))?, Some(p.get(&bname(name))?), *geom)?;
                (y, Cache::Input(x))
            }
            Layer::ConvTranspose { name, stride, pad, .. } => {
                let y = ops::conv_transpose2d_forward(&x, p.get(&wname(name))?, Some(p.get(&bname(name))?), *stride, *pad)?;
                (y, Cache::Input(x))
            }
            Layer::InstanceNorm { name, .. } => {
                let (y, c) = ops::instance_norm_forward(&x, p.get(&wname(name))?, p.get(&bname(name))?)?;
                (y, Cache::Norm(c))
            }
            Layer::Relu => (ops::relu_forward(&x), Cache::Input(x)),
            Layer::LeakyRelu(s) => (ops::leaky_relu_forward(&x, *s), Cache::Input(x)),
            Layer::Tanh => {
                let y = ops::tanh_forward(&x);
                (y.clone(), Cache::Output(y))
            }
            Layer::ReflectPad(k) => {
                let y = ops::reflect_pad_forward(&x, pad4(*k))?;
                (y, Cache::Shape(x.shape().to_vec()))
            }
            Layer::MaxPool2 => {
                let (y, arg) = ops::max_pool2_forward(&x)?;
                (y, Cache::Pool(x.shape().to_vec(), arg))
            }
        })
    }

    /// Back-propagates `gy`. Parameter gradients are accumulated into
    /// `grads` when given; the input gradient is returned when
    /// `need_input` is set.
    pub fn backward<T: Scalar>(
        &self,
        p: &Params<T>,
        cache: &Cache<T>,
        gy: &Tensor<T>,
        grads: Option<&mut Params<T>>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let want_params = grads.is_some();
        Ok(match (self, cache) {
            (Layer::Conv { name, geom, .. }, Cache::Input(x)) => {
                let g = ops::conv2d_backward(x, p.get(&wname(name))?, true, *geom, gy, need_input, want_params);
                if let Some(grads) = grads {
                    grads.accumulate(&wname(name), g.weight.expect("requested"))?;
                    grads.accumulate(&bname(name), g.bias.expect("requested"))?;
                }
                g.input
            }
            (Layer::ConvTranspose { name, stride, pad, .. }, Cache::Input(x)) => {
                let g = ops::conv_transpose2d_backward(x, p.get(&wname(name))?, true, *stride, *pad, gy, need_input, want_params);
                if let Some(grads) = grads {
                    grads.accumulate(&wname(name), g.weight.expect("requested"))?;
                    grads.accumulate(&bname(name), g.bias.expect("requested"))?;
                }
                g.input
            }
            (Layer::InstanceNorm { name, .. }, Cache::Norm(c)) => {
                let (gx, gg, gb) = ops::instance_norm_backward(c, p.get(&wname(name))?, gy, want_params);
                if let Some(grads) = grads {
                    grads.accumulate(&wname(name), gg.expect("requested"))?;
                    grads.accumulate(&bname(name), gb.expect("requested"))?;
                }
                Some(gx)
            }
            (Layer::Relu, Cache::Input(x)) => Some(ops::relu_backward(x, gy)),
            (Layer::LeakyRelu(s), Cache::Input(x)) => Some(ops::leaky_relu_backward(x, *s, gy)),
            (Layer::Tanh, Cache::Output(y)) => Some(ops::tanh_backward(y, gy)),
            (Layer::ReflectPad(k), Cache::Shape(s)) => Some(ops::reflect_pad_backward(s, pad4(*k), gy)),
            (Layer::MaxPool2, Cache::Pool(s, arg)) => Some(ops::max_pool2_backward(s, arg, gy)),
            _ => unreachable!("cache does not belong to layer {self:?}"),
        })
    }
}

fn pad4(k: usize) -> Pad4 {
    (k, k, k, k)
}

/// A chain of layers executed in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers.iter().flat_map(Layer::param_shapes).collect()
    }

    pub fn init_params(&self, params: &mut Params<f64>, rng: &mut impl Rng) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init_params(params, rng))
    }

    pub fn forward<T: Scalar>(&self, p: &Params<T>, x: Tensor<T>) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for l in &self.layers {
            let (y, c) = l.forward(p, h)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    /// Forward pass that also returns the outputs of the layers listed in
    /// `taps` (ascending indices).
    pub fn forward_taps<T: Scalar>(
        &self,
        p: &Params<T>,
        x: Tensor<T>,
        taps: &[usize],
    ) -> Result<(Vec<Tensor<T>>, Vec<Cache<T>>)> {
        let last = taps.iter().copied().max().map_or(0, |m| m + 1);
        let mut caches = Vec::with_capacity(last);
        let mut outs = Vec::with_capacity(taps.len());
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate().take(last) {
            let (y, c) = l.forward(p, h)?;
            caches.push(c);
            if taps.contains(&i) {
                outs.push(y.clone());
            }
            h = y;
        }
        Ok((outs, caches))
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &Params<T>,
        caches: &[Cache<T>],
        gy: Tensor<T>,
        grads: Option<&mut Params<T>>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        self.backward_injected(p, caches, alloc::vec![(caches.len() - 1, gy)], grads, need_input)
    }

    /// Backward pass where gradient `g` is injected at the output of layer
    /// `i` for every `(i, g)` in `injections`. Only the layers that ran
    /// (as recorded in `caches`) are traversed.
    pub fn backward_injected<T: Scalar>(
        &self,
        p: &Params<T>,
        caches: &[Cache<T>],
        mut injections: Vec<(usize, Tensor<T>)>,
        mut grads: Option<&mut Params<T>>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let mut g: Option<Tensor<T>> = None;
        for i in (0..caches.len()).rev() {
            while let Some(pos) = injections.iter().position(|(k, _)| *k == i) {
                let (_, inj) = injections.swap_remove(pos);
                match g.as_mut() {
                    Some(acc) => acc.add_assign(&inj),
                    None => g = Some(inj),
                }
            }
            let Some(gy) = g.take() else { continue };
            let want_in = i > 0 || need_input;
            g = self.layers[i].backward(p, &caches[i], &gy, grads.as_deref_mut(), want_in)?;
        }
        Ok(g)
    }
}
