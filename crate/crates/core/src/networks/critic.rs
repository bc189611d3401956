use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{parse_kv, parse_list, read_stamp, stamp};
use crate::error::{bail, Result};
use crate::nn::{Cache, Layer, Params, ParamStore, Sequential};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
const KERNEL: usize = 4;

/// PatchGAN-style critic plan: one 4×4 convolution per entry of
/// `channel_plan` (stride 2 for all but the last, which uses stride 1),
/// then a 4×4 stride-1 convolution down to a single score channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub channel_plan: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            channel_plan: alloc::vec![64, 128, 256, 512],
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channel_plan.is_empty() || self.channel_plan.contains(&0) {
            bail!(Config, "critic channel plan must be non-empty with positive entries");
        }
        Ok(())
    }

    /// Stride of every convolution, score layer included.
    pub fn strides(&self) -> Vec<usize> {
        let l = self.channel_plan.len();
        (0..=l).map(|i| if i + 1 < l { 2 } else { 1 }).collect()
    }

    /// Side of the input patch seen by one score: `1 + Σ (k-1)·Π stride`.
    pub fn receptive_field(&self) -> usize {
        let mut jump = 1;
        let mut rf = 1;
        for s in self.strides() {
            rf += (KERNEL - 1) * jump;
            jump *= s;
        }
        rf
    }

    /// Smallest accepted input side; equals the receptive field.
    pub fn min_input(&self) -> usize {
        self.receptive_field()
    }

    /// Closed-form score-map side for an input side `len` (4×4 kernels,
    /// padding 1): stride 2 maps `n ↦ ⌊n/2⌋`, stride 1 maps `n ↦ n-1`.
    pub fn score_len(&self, len: usize) -> usize {
        self.strides().into_iter().fold(len, |n, s| if s == 2 { n / 2 } else { n.saturating_sub(1) })
    }

    pub fn canonical(&self) -> String {
        let plan: Vec<String> = self.channel_plan.iter().map(|c| format!("{c}")).collect();
        format!("channel_plan={}", plan.join("/"))
    }

    pub fn parse(s: &str) -> Result<Self> {
        let m = parse_kv(s)?;
        let cfg = Self {
            channel_plan: parse_list(&m, "channel_plan")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub config: DiscriminatorConfig,
    pub net: Sequential,
}

impl Critic {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let strides = config.strides();
        let mut layers = Vec::new();
        let mut ch = 3;
        for (i, &out) in config.channel_plan.iter().enumerate() {
            layers.push(Layer::conv(&format!("conv{i}"), ch, out, KERNEL, strides[i], 1));
            if i > 0 {
                layers.push(Layer::norm(&format!("conv{i}_norm"), out));
            }
            layers.push(Layer::LeakyRelu(LEAKY_SLOPE));
            ch = out;
        }
        layers.push(Layer::conv("score", ch, 1, KERNEL, 1, 1));
        Ok(Self {
            config,
            net: Sequential::new(layers),
        })
    }

    pub fn from_params(store: &ParamStore) -> Result<Self> {
        let net = Self::new(DiscriminatorConfig::parse(read_stamp(store, "critic")?)?)?;
        let shapes = net.net.param_shapes();
        if shapes.len() != store.len() {
            bail!(Format, "critic expects {} tensors, store has {}", shapes.len(), store.len());
        }
        for (name, shape) in shapes {
            if store.get(&name)?.shape() != shape.as_slice() {
                bail!(Format, "`{name}` has an unexpected shape");
            }
        }
        Ok(net)
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = rng::stream(seed, Purpose::CriticInit, 0);
        let mut p = ParamStore::new();
        self.net.init_params(&mut p, &mut rng)?;
        stamp(&mut p, "critic", &self.config.canonical(), seed);
        Ok(p)
    }

    fn check_input<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.expect_rank4("critic input")?;
        if c != 3 {
            bail!(Shape, "critic expects 3 channels, got {c}");
        }
        let m = self.config.min_input();
        if h < m || w < m {
            bail!(Shape, "critic input {h}×{w} is below the {m}×{m} minimum of its layer plan");
        }
        Ok(())
    }

    /// Score map `N×1×h×w` with no output squashing.
    pub fn forward<T: Scalar>(&self, p: &Params<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(p, x)?.0)
    }

    pub fn forward_cached<T: Scalar>(&self, p: &Params<T>, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        self.check_input(x)?;
        self.net.forward(p, x.clone())
    }

    /// Per-sample critic values: the mean of each sample's score map.
    pub fn values(scores: &Tensor<f64>) -> Vec<f64> {
        let (n, _, h, w) = scores.dims4();
        (0..n).map(|b| scores.plane(b, 0).iter().sum::<f64>() / (h * w) as f64).collect()
    }

    /// Back-propagates a score-map gradient; returns the input gradient and
    /// optionally accumulates parameter gradients.
    pub fn backward<T: Scalar>(
        &self,
        p: &Params<T>,
        caches: &[Cache<T>],
        grad_scores: Tensor<T>,
        grads: Option<&mut Params<T>>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        self.net.backward(p, caches, grad_scores, grads, need_input)
    }
}
