//! Frozen convolutional feature extractor for the perceptual loss.
//!
//! The default plan is the VGG19 convolution stack up to `conv5_4`
//! (3×3 convolutions + ReLU, 2×2 max pooling between blocks). Taps are
//! post-activation outputs. Weights come either from a named-tensor file
//! (`conv1_1.weight`, `conv1_1.bias`, …) or from a seeded random
//! initialization with identical topology.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::nn::{Cache, Layer, ParamStore, Sequential};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

pub const DEFAULT_TAPS: [&str; 4] = ["conv2_2", "conv3_3", "conv4_4", "conv5_4"];

const VGG19_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)];
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Input mapping applied before the first layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preprocess {
    /// Feed `[-1,1]` values unchanged.
    Identity,
    /// `[-1,1] → [0,1]`, then per-channel ImageNet mean/std standardization.
    ImageNet,
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub net: Sequential,
    /// `(tap name, index of the layer whose output is tapped)`, by depth.
    pub taps: Vec<(String, usize)>,
    pub preprocess: Preprocess,
    pub params: ParamStore,
    /// Smallest accepted input side.
    pub min_side: usize,
    /// Human-readable origin of the weights (`random(seed)` or a path).
    pub weights_source: String,
}

/// Saved state of [`FeatureExtractor::extract_cached`].
pub struct FeatureCache {
    caches: Vec<Cache<f64>>,
}

fn vgg19_plan(width_divisor: usize) -> Result<(Sequential, Vec<(String, usize, usize)>)> {
    if width_divisor == 0 || 64 % width_divisor != 0 {
        bail!(Config, "VGG width divisor must divide 64, got {width_divisor}");
    }
    let mut layers = Vec::new();
    let mut names = Vec::new(); // (tap name, layer index, pools before it)
    let mut ch = 3;
    for (bi, &(count, width)) in VGG19_BLOCKS.iter().enumerate() {
        let out = width / width_divisor;
        for ci in 0..count {
            let name = format!("conv{}_{}", bi + 1, ci + 1);
            layers.push(Layer::conv(&name, ch, out, 3, 1, 1));
            layers.push(Layer::Relu);
            names.push((name, layers.len() - 1, bi));
            ch = out;
        }
        if bi + 1 < VGG19_BLOCKS.len() {
            layers.push(Layer::MaxPool2);
        }
    }
    Ok((Sequential::new(layers), names))
}

impl FeatureExtractor {
    /// Arbitrary plan, mainly for tests and custom backbones.
    pub fn new(
        net: Sequential,
        taps: Vec<(String, usize)>,
        preprocess: Preprocess,
        params: ParamStore,
        min_side: usize,
    ) -> Result<Self> {
        if taps.is_empty() {
            bail!(Config, "feature extractor needs at least one tap");
        }
        if taps.windows(2).any(|w| w[0].1 >= w[1].1) || taps.iter().any(|t| t.1 >= net.layers.len()) {
            bail!(Config, "feature taps must be strictly increasing layer indices inside the plan");
        }
        for (name, shape) in net.param_shapes() {
            if params.get(&name)?.shape() != shape.as_slice() {
                bail!(Config, "extractor tensor `{name}` has the wrong shape");
            }
        }
        Ok(Self {
            net,
            taps,
            preprocess,
            params,
            min_side,
            weights_source: "custom".to_string(),
        })
    }

    fn vgg19(tap_names: &[&str], width_divisor: usize, params: Option<ParamStore>, seed: u64) -> Result<Self> {
        let (net, all) = vgg19_plan(width_divisor)?;
        let mut taps = Vec::new();
        let mut deepest_pools = 0;
        for t in tap_names {
            let Some((name, idx, pools)) = all.iter().find(|(n, _, _)| n == t) else {
                bail!(Config, "unknown VGG19 tap `{t}`");
            };
            taps.push((name.clone(), *idx));
            deepest_pools = deepest_pools.max(*pools);
        }
        let last = taps.iter().map(|t| t.1).max().unwrap_or(0);
        let net = Sequential::new(net.layers[..=last].to_vec());
        let (params, source) = match params {
            Some(p) => (p, "file".to_string()),
            None => {
                let mut p = ParamStore::new();
                let mut rng = rng::stream(seed, Purpose::ExtractorInit, 0);
                net.init_params(&mut p, &mut rng)?;
                (p, format!("random({seed})"))
            }
        };
        // keep only the tensors the truncated plan uses, in plan order
        let mut used = ParamStore::new();
        for (name, shape) in net.param_shapes() {
            let t = params.get(&name)?;
            if t.shape() != shape.as_slice() {
                bail!(Config, "extractor tensor `{name}` has shape {:?}, expected {:?}", t.shape(), shape);
            }
            used.insert(&name, t.clone())?;
        }
        let mut ex = Self::new(net, taps, Preprocess::ImageNet, used, 2usize << deepest_pools)?;
        ex.weights_source = source;
        Ok(ex)
    }

    /// VGG19 topology with seeded random weights. `width_divisor` scales
    /// every channel count down (1 = full width).
    pub fn vgg19_random(tap_names: &[&str], width_divisor: usize, seed: u64) -> Result<Self> {
        Self::vgg19(tap_names, width_divisor, None, seed)
    }

    /// VGG19 topology with weights loaded from a named-tensor store; the
    /// width is inferred from `conv1_1.weight`.
    pub fn vgg19_from_params(tap_names: &[&str], store: ParamStore) -> Result<Self> {
        let out = store.get("conv1_1.weight")?.shape()[0];
        if out == 0 || 64 % out != 0 {
            bail!(Config, "conv1_1 has {out} output channels; expected a divisor of 64");
        }
        Self::vgg19(tap_names, 64 / out, Some(store), 0)
    }

    pub fn tap_names(&self) -> Vec<&str> {
        self.taps.iter().map(|t| t.0.as_str()).collect()
    }

    fn preprocess(&self, x: &Tensor<f64>) -> Tensor<f64> {
        match self.preprocess {
            Preprocess::Identity => x.clone(),
            Preprocess::ImageNet => {
                let (n, c, _, _) = x.dims4();
                let mut y = x.clone();
                for b in 0..n {
                    for ch in 0..c {
                        let (m, s) = (IMAGENET_MEAN[ch % 3], IMAGENET_STD[ch % 3]);
                        for v in y.plane_mut(b, ch) {
                            *v = ((*v + 1.0) * 0.5 - m) / s;
                        }
                    }
                }
                y
            }
        }
    }

    fn preprocess_backward(&self, g: &mut Tensor<f64>) {
        if self.preprocess == Preprocess::ImageNet {
            let (n, c, _, _) = g.dims4();
            for b in 0..n {
                for ch in 0..c {
                    let k = 0.5 / IMAGENET_STD[ch % 3];
                    for v in g.plane_mut(b, ch) {
                        *v *= k;
                    }
                }
            }
        }
    }

    fn check(&self, x: &Tensor<f64>) -> Result<()> {
        let (_, c, h, w) = x.expect_rank4("feature extractor input")?;
        let first_in = self.net.param_shapes().first().map_or(3, |s| s.1[1]);
        if c != first_in {
            bail!(Shape, "feature extractor expects {first_in} channels, got {c}");
        }
        if h < self.min_side || w < self.min_side {
            let deepest = &self.taps.last().expect("non-empty").0;
            bail!(
                Shape,
                "input {h}×{w} is too small: tap `{deepest}` needs at least {0}×{0}",
                self.min_side
            );
        }
        Ok(())
    }

    /// Post-activation feature maps at every tap, shallowest first.
    pub fn extract(&self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(self.extract_cached(x)?.0)
    }

    pub fn extract_cached(&self, x: &Tensor<f64>) -> Result<(Vec<Tensor<f64>>, FeatureCache)> {
        self.check(x)?;
        let idx: Vec<usize> = self.taps.iter().map(|t| t.1).collect();
        let (feats, caches) = self.net.forward_taps(&self.params, self.preprocess(x), &idx)?;
        Ok((feats, FeatureCache { caches }))
    }

    /// Gradient with respect to the `[-1,1]` input, given one gradient per
    /// tap.
    pub fn backward_input(&self, cache: &FeatureCache, tap_grads: Vec<Tensor<f64>>) -> Result<Tensor<f64>> {
        let inj = self.taps.iter().map(|t| t.1).zip(tap_grads).collect();
        let mut g = self
            .net
            .backward_injected(&self.params, &cache.caches, inj, None, true)?
            .expect("input gradient requested");
        self.preprocess_backward(&mut g);
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg_ladder_halves_per_block() {
        let ex = FeatureExtractor::vgg19_random(&DEFAULT_TAPS, 16, 0).unwrap();
        let x = Tensor::full(&[1, 3, 64, 64], 0.1);
        let sides: Vec<usize> = ex.extract(&x).unwrap().iter().map(|f| f.shape()[2]).collect();
        assert_eq!(sides, alloc::vec![32, 16, 8, 4]);
        assert_eq!(ex.min_side, 32);
        let err = ex.extract(&Tensor::full(&[1, 3, 16, 40], 0.0)).unwrap_err();
        assert!(err.to_string().contains("conv5_4"), "{err}");
    }

    #[test]
    fn unknown_tap_is_a_config_error() {
        assert!(matches!(
            FeatureExtractor::vgg19_random(&["conv9_9"], 16, 0),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn loading_infers_width() {
        let ex = FeatureExtractor::vgg19_random(&DEFAULT_TAPS, 8, 3).unwrap();
        let again = FeatureExtractor::vgg19_from_params(&DEFAULT_TAPS, ex.params.clone()).unwrap();
        assert_eq!(again.params, ex.params);
        assert_eq!(again.net, ex.net);
    }
}
