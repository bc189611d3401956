use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::rfb::{RfbBlock, RfbCache, RfbsConfig};
use super::{parse_kv, parse_list, parse_usize, read_stamp, stamp};
use crate::error::{bail, Result};
use crate::nn::{Cache, Layer, Params, ParamStore, Sequential};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Name prefix of the last convolution (the one followed by tanh).
pub const FINAL_LAYER: &str = "tail.out";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub n_rfbs: usize,
    pub rfb_channels: usize,
    pub downsample_steps: usize,
    pub dilation_rates: [usize; 4],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            n_rfbs: 9,
            rfb_channels: 256,
            downsample_steps: 2,
            dilation_rates: [1, 3, 3, 5],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            bail!(Config, "base_channels must be at least 1");
        }
        if self.n_rfbs == 0 {
            bail!(Config, "n_rfbs must be at least 1");
        }
        if self.downsample_steps == 0 {
            bail!(Config, "downsample_steps must be at least 1");
        }
        if self.rfb_channels == 0 || self.rfb_channels % 4 != 0 {
            bail!(Config, "rfb_channels must be a positive multiple of 4, got {}", self.rfb_channels);
        }
        RfbsConfig {
            in_channels: self.rfb_channels,
            dilation_rates: self.dilation_rates,
        }
        .validate()
    }

    /// Spatial sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.downsample_steps
    }

    pub fn canonical(&self) -> String {
        let [a, b, c, d] = self.dilation_rates;
        format!(
            "base_channels={},n_rfbs={},rfb_channels={},downsample_steps={},dilations={a}/{b}/{c}/{d}",
            self.base_channels, self.n_rfbs, self.rfb_channels, self.downsample_steps
        )
    }

    pub fn parse(s: &str) -> Result<Self> {
        let m = parse_kv(s)?;
        let d = parse_list(&m, "dilations")?;
        let Ok(dilation_rates) = <[usize; 4]>::try_from(d.as_slice()) else {
            bail!(Format, "expected four dilation rates, got {}", d.len());
        };
        let cfg = Self {
            base_channels: parse_usize(&m, "base_channels")?,
            n_rfbs: parse_usize(&m, "n_rfbs")?,
            rfb_channels: parse_usize(&m, "rfb_channels")?,
            downsample_steps: parse_usize(&m, "downsample_steps")?,
            dilation_rates,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Encoder (reflect-padded 7×7 conv, strided 3×3 convs), a stack of RFB-s
/// blocks, decoder (4×4 transposed convs, 7×7 conv, tanh) and a global skip
/// that adds the input image to the predicted residual.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub head: Sequential,
    pub blocks: Vec<RfbBlock>,
    pub tail: Sequential,
}

pub struct GeneratorCache<T> {
    head: Vec<Cache<T>>,
    blocks: Vec<RfbCache<T>>,
    tail: Vec<Cache<T>>,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let b = config.base_channels;
        let s = config.downsample_steps;
        let mut head = alloc::vec![
            Layer::ReflectPad(3),
            Layer::conv("head.conv", 3, b, 7, 1, 0),
            Layer::norm("head.conv_norm", b),
            Layer::Relu,
        ];
        let mut ch = b;
        for i in 0..s {
            let out = if i + 1 == s { config.rfb_channels } else { b << (i + 1) };
            head.push(Layer::conv(&format!("head.down{i}"), ch, out, 3, 2, 1));
            head.push(Layer::norm(&format!("head.down{i}_norm"), out));
            head.push(Layer::Relu);
            ch = out;
        }
        let blocks = (0..config.n_rfbs)
            .map(|k| {
                RfbBlock::new(
                    &format!("rfb{k}"),
                    RfbsConfig {
                        in_channels: config.rfb_channels,
                        dilation_rates: config.dilation_rates,
                    },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut tail = Vec::new();
        for j in 0..s {
            let out = b << (s - 1 - j);
            tail.push(Layer::ConvTranspose {
                name: format!("tail.up{j}"),
                in_c: ch,
                out_c: out,
                kernel: 4,
                stride: 2,
                pad: 1,
            });
            tail.push(Layer::norm(&format!("tail.up{j}_norm"), out));
            tail.push(Layer::Relu);
            ch = out;
        }
        tail.push(Layer::ReflectPad(3));
        tail.push(Layer::conv(FINAL_LAYER, ch, 3, 7, 1, 0));
        tail.push(Layer::Tanh);
        Ok(Self {
            config,
            head: Sequential::new(head),
            blocks,
            tail: Sequential::new(tail),
        })
    }

    /// Rebuilds the network described by a stored parameter set and checks
    /// that every tensor has the expected shape.
    pub fn from_params(store: &ParamStore) -> Result<Self> {
        let cfg = GeneratorConfig::parse(read_stamp(store, "generator")?)?;
        let net = Self::new(cfg)?;
        net.check_params(store)?;
        Ok(net)
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = self.head.param_shapes();
        for b in &self.blocks {
            v.extend(b.param_shapes());
        }
        v.extend(self.tail.param_shapes());
        v
    }

    pub fn check_params<T: Scalar>(&self, store: &Params<T>) -> Result<()> {
        let shapes = self.param_shapes();
        if shapes.len() != store.len() {
            bail!(Format, "generator expects {} tensors, store has {}", shapes.len(), store.len());
        }
        for (name, shape) in shapes {
            let t = store.get(&name)?;
            if t.shape() != shape.as_slice() {
                bail!(Format, "`{name}` has shape {:?}, expected {:?}", t.shape(), shape);
            }
        }
        Ok(())
    }

    /// Freshly initialized weights, deterministic in `seed`.
    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = rng::stream(seed, Purpose::GeneratorInit, 0);
        let mut p = ParamStore::new();
        self.head.init_params(&mut p, &mut rng)?;
        for b in &self.blocks {
            b.init_params(&mut p, &mut rng)?;
        }
        self.tail.init_params(&mut p, &mut rng)?;
        stamp(&mut p, "generator", &self.config.canonical(), seed);
        Ok(p)
    }

    pub fn check_input<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.expect_rank4("generator input")?;
        if c != 3 {
            bail!(Shape, "generator expects 3 channels, got {c}");
        }
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 || h < m || w < m {
            let (ph, pw) = (h.div_ceil(m).max(1) * m, w.div_ceil(m).max(1) * m);
            bail!(
                Shape,
                "input {h}×{w} is not a multiple of {m}; pad it to {ph}×{pw} (reflect padding) and crop the output back"
            );
        }
        Ok(())
    }

    /// Training-graph forward: `x + tanh(net(x))`, unclamped.
    pub fn forward_train<T: Scalar>(&self, p: &Params<T>, x: &Tensor<T>) -> Result<(Tensor<T>, GeneratorCache<T>)> {
        self.check_input(x)?;
        let (mut h, head) = self.head.forward(p, x.clone())?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward_cached(p, h)?;
            blocks.push(c);
            h = y;
        }
        let (mut residual, tail) = self.tail.forward(p, h)?;
        residual.add_assign(x);
        Ok((residual, GeneratorCache { head, blocks, tail }))
    }

    /// Inference forward: the training output clamped to `[-1, 1]`.
    pub fn forward(&self, p: &ParamStore, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (y, _) = self.forward_train(p, x)?;
        Ok(y.map(|v| v.clamp(-1.0, 1.0)))
    }

    /// Parameter gradients of `<grad_out, forward_train(x)>`.
    pub fn backward<T: Scalar>(&self, p: &Params<T>, cache: &GeneratorCache<T>, grad_out: &Tensor<T>) -> Result<Params<T>> {
        let mut grads = Params::new();
        let mut g = self
            .tail
            .backward(p, &cache.tail, grad_out.clone(), Some(&mut grads), true)?
            .expect("input gradient requested");
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            g = b.backward(p, c, &g, Some(&mut grads))?;
        }
        self.head.backward(p, &cache.head, g, Some(&mut grads), false)?;
        Ok(grads)
    }

    /// Zeroes the final convolution so the residual branch outputs
    /// `tanh(0) = 0` and the generator reduces to the identity.
    pub fn zero_final_layer(p: &mut ParamStore) -> Result<()> {
        for suffix in ["weight", "bias"] {
            p.get_mut(&format!("{FINAL_LAYER}.{suffix}"))?.data_mut().fill(0.0);
        }
        Ok(())
    }
}
