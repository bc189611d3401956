use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::nn::ops::{self, ConvGeom};
use crate::nn::{Cache, Layer, Params, Sequential};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Shape of one RFB-s block: a 1×1 shortcut plus four reduced feature
/// branches whose outputs are concatenated and projected back by a 1×1
/// convolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RfbsConfig {
    pub in_channels: usize,
    pub dilation_rates: [usize; 4],
}

impl RfbsConfig {
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            dilation_rates: [1, 3, 3, 5],
        }
    }

    pub fn branch_channels(&self) -> usize {
        self.in_channels / 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.in_channels % 4 != 0 {
            bail!(Config, "RFB-s channels must be a positive multiple of 4, got {}", self.in_channels);
        }
        if self.dilation_rates.contains(&0) {
            bail!(Config, "dilation rates must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RfbBlock {
    pub prefix: String,
    pub config: RfbsConfig,
    pub shortcut: Layer,
    pub branches: [Sequential; 4],
    pub projection: Layer,
}

pub struct RfbCache<T> {
    shortcut: Cache<T>,
    branches: Vec<Vec<Cache<T>>>,
    projection: Cache<T>,
    pre_activation: Tensor<T>,
}

impl RfbBlock {
    pub fn new(prefix: &str, config: RfbsConfig) -> Result<Self> {
        config.validate()?;
        let c = config.in_channels;
        let bc = config.branch_channels();
        let [d0, d1, d2, d3] = config.dilation_rates;
        let name = |s: &str| format!("{prefix}.{s}");
        let conv = |n: &str, cin: usize, cout: usize, kernel: (usize, usize), geom: ConvGeom| Layer::Conv {
            name: name(n),
            in_c: cin,
            out_c: cout,
            kernel,
            geom,
        };
        let same = |kh: usize, kw: usize| ConvGeom {
            stride: (1, 1),
            pad: (kh / 2, kw / 2),
            dilation: (1, 1),
        };
        let reduce = |b: usize| {
            vec![
                conv(&format!("b{b}.reduce"), c, bc, (1, 1), ConvGeom::new(1, 0)),
                Layer::norm(&name(&format!("b{b}.reduce_norm")), bc),
                Layer::Relu,
            ]
        };
        let dilated = |b: usize, d: usize| {
            vec![
                conv(&format!("b{b}.dilated"), bc, bc, (3, 3), ConvGeom::dilated(d)),
                Layer::norm(&name(&format!("b{b}.dilated_norm")), bc),
            ]
        };
        let spatial = |b: usize, kh: usize, kw: usize| {
            vec![
                conv(&format!("b{b}.spatial"), bc, bc, (kh, kw), same(kh, kw)),
                Layer::norm(&name(&format!("b{b}.spatial_norm")), bc),
                Layer::Relu,
            ]
        };
        let b0 = [reduce(0), dilated(0, d0)].concat();
        let b1 = [reduce(1), spatial(1, 1, 3), dilated(1, d1)].concat();
        let b2 = [reduce(2), spatial(2, 3, 1), dilated(2, d2)].concat();
        let b3 = [reduce(3), spatial(3, 3, 3), dilated(3, d3)].concat();
        Ok(Self {
            prefix: prefix.into(),
            shortcut: conv("shortcut", c, c, (1, 1), ConvGeom::new(1, 0)),
            branches: [Sequential::new(b0), Sequential::new(b1), Sequential::new(b2), Sequential::new(b3)],
            projection: conv("project", 4 * bc, c, (1, 1), ConvGeom::new(1, 0)),
            config,
        })
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = self.shortcut.param_shapes();
        for b in &self.branches {
            v.extend(b.param_shapes());
        }
        v.extend(self.projection.param_shapes());
        v
    }

    pub fn init_params(&self, p: &mut Params<f64>, rng: &mut impl Rng) -> Result<()> {
        self.shortcut.init_params(p, rng)?;
        for b in &self.branches {
            b.init_params(p, rng)?;
        }
        self.projection.init_params(p, rng)
    }

    fn check_input<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, _, _) = x.expect_rank4("RFB-s input")?;
        if c != self.config.in_channels {
            bail!(Shape, "{}: expected {} channels, got {c}", self.prefix, self.config.in_channels);
        }
        Ok(())
    }

    /// Shortcut output alone (no activation).
    pub fn shortcut_forward<T: Scalar>(&self, p: &Params<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        Ok(self.shortcut.forward(p, x.clone())?.0)
    }

    /// Output of feature branch `b` after its last normalization.
    pub fn branch_forward<T: Scalar>(&self, p: &Params<T>, x: &Tensor<T>, b: usize) -> Result<Tensor<T>> {
        self.check_input(x)?;
        Ok(self.branches[b].forward(p, x.clone())?.0)
    }

    /// `shortcut(x) + project(concat(branches))`, before the final ReLU.
    pub fn pre_activation<T: Scalar>(&self, p: &Params<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(p, x.clone())?.1.pre_activation)
    }

    pub fn forward<T: Scalar>(&self, p: &Params<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(p, x.clone())?.0)
    }

    pub fn forward_cached<T: Scalar>(&self, p: &Params<T>, x: Tensor<T>) -> Result<(Tensor<T>, RfbCache<T>)> {
        self.check_input(&x)?;
        let mut outs = Vec::with_capacity(4);
        let mut bcaches = Vec::with_capacity(4);
        for b in &self.branches {
            let (y, c) = b.forward(p, x.clone())?;
            outs.push(y);
            bcaches.push(c);
        }
        let (mut pre, sc) = self.shortcut.forward(p, x)?;
        let cat = ops::concat_channels(&outs)?;
        let (proj, pc) = self.projection.forward(p, cat)?;
        pre.add_assign(&proj);
        let y = ops::relu_forward(&pre);
        Ok((
            y,
            RfbCache {
                shortcut: sc,
                branches: bcaches,
                projection: pc,
                pre_activation: pre,
            },
        ))
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &Params<T>,
        cache: &RfbCache<T>,
        gy: &Tensor<T>,
        mut grads: Option<&mut Params<T>>,
    ) -> Result<Tensor<T>> {
        let gpre = ops::relu_backward(&cache.pre_activation, gy);
        let gcat = self
            .projection
            .backward(p, &cache.projection, &gpre, grads.as_deref_mut(), true)?
            .expect("input gradient requested");
        let bc = self.config.branch_channels();
        let parts = ops::split_channels(&gcat, &[bc; 4]);
        let mut gx = self
            .shortcut
            .backward(p, &cache.shortcut, &gpre, grads.as_deref_mut(), true)?
            .expect("input gradient requested");
        for ((b, c), g) in self.branches.iter().zip(&cache.branches).zip(parts) {
            let gb = b.backward(p, c, g, grads.as_deref_mut(), true)?.expect("input gradient requested");
            gx.add_assign(&gb);
        }
        Ok(gx)
    }
}
