//! Training objectives: Wasserstein critic loss with gradient penalty,
//! generator adversarial loss, multi-tap feature loss, pixel L2 loss and
//! their weighted total.
//!
//! All pairwise losses are means (over batch, and over pixels/channels
//! where applicable), so the weights are independent of resolution.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::features::FeatureExtractor;
use crate::networks::Critic;
use crate::nn::{ParamStore, Params};
use crate::rng::{self, Purpose};
use crate::scalar::Dual;
use crate::tensor::Tensor;

/// Pixel-loss weight for the unnormalized (summed) convention.
pub const SUMMED_LAMBDA_2: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_gp: f64,
    pub lambda_x: f64,
    /// Weight of the pixel term. The default of 100 suits mean-normalized
    /// L2 on `[-1,1]` images; see [`SUMMED_LAMBDA_2`] for the summed form.
    pub lambda_2: f64,
    /// Per-tap feature weights; must sum to 1.
    pub layer_weights: Vec<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_gp: 10.0,
            lambda_x: 1.0,
            lambda_2: 100.0,
            layer_weights: vec![0.2, 0.4, 0.2, 0.2],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_gp, self.lambda_x, self.lambda_2];
        if all.iter().chain(&self.layer_weights).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            bail!(Config, "loss weights must be finite and non-negative");
        }
        let s: f64 = self.layer_weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            bail!(Config, "feature layer weights sum to {s}, expected 1");
        }
        Ok(())
    }
}

/// Scalars recorded for one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBundle {
    /// `-mean D(G(blurred))`.
    pub adv_g: f64,
    /// `-(mean D(sharp) - mean D(G(blurred)))`, the critic's Wasserstein term.
    pub adv_d: f64,
    /// Unweighted gradient penalty.
    pub gp: f64,
    pub feature: f64,
    pub l2: f64,
    pub total_g: f64,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [self.adv_g, self.adv_d, self.gp, self.feature, self.l2, self.total_g]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Name of the first non-finite field.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("adv_g", self.adv_g),
            ("adv_d", self.adv_d),
            ("gp", self.gp),
            ("feature", self.feature),
            ("l2", self.l2),
            ("total_g", self.total_g),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

fn same_shape(a: &Tensor<f64>, b: &Tensor<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        bail!(Shape, "{what}: shapes {:?} and {:?} differ", a.shape(), b.shape());
    }
    if a.is_empty() {
        bail!(Shape, "{what}: empty input");
    }
    Ok(())
}

/// Mean squared difference over every element.
pub fn l2_loss(restored: &Tensor<f64>, sharp: &Tensor<f64>) -> Result<f64> {
    same_shape(restored, sharp, "l2 loss")?;
    let s: f64 = restored.data().iter().zip(sharp.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / restored.len() as f64)
}

/// L2 loss and its gradient with respect to `restored`.
pub fn l2_loss_grad(restored: &Tensor<f64>, sharp: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
    let loss = l2_loss(restored, sharp)?;
    let k = 2.0 / restored.len() as f64;
    let g = restored.zip_map(sharp, |a, b| k * (a - b))?;
    Ok((loss, g))
}

/// `-mean(scores)`.
pub fn generator_adv_loss(fake_scores: &Tensor<f64>) -> Result<f64> {
    if fake_scores.is_empty() {
        bail!(Shape, "generator adversarial loss on an empty score map");
    }
    Ok(-fake_scores.mean())
}

fn check_layer_weights(ex: &FeatureExtractor, w: &[f64]) -> Result<()> {
    if w.len() != ex.taps.len() {
        bail!(Config, "{} layer weights for {} feature taps", w.len(), ex.taps.len());
    }
    Ok(())
}

/// `Σ_k w_k · mean((φ_k(sharp) − φ_k(restored))²)`.
pub fn feature_loss(ex: &FeatureExtractor, restored: &Tensor<f64>, sharp: &Tensor<f64>, layer_weights: &[f64]) -> Result<f64> {
    check_layer_weights(ex, layer_weights)?;
    same_shape(restored, sharp, "feature loss")?;
    let fr = ex.extract(restored)?;
    let fs = ex.extract(sharp)?;
    let mut total = 0.0;
    for ((a, b), w) in fr.iter().zip(&fs).zip(layer_weights) {
        total += w * l2_loss(a, b)?;
    }
    Ok(total)
}

/// Feature loss and its gradient with respect to `restored`. Features of
/// `sharp` can be passed precomputed.
pub fn feature_loss_grad(
    ex: &FeatureExtractor,
    restored: &Tensor<f64>,
    sharp_features: &[Tensor<f64>],
    layer_weights: &[f64],
) -> Result<(f64, Tensor<f64>)> {
    check_layer_weights(ex, layer_weights)?;
    let (fr, cache) = ex.extract_cached(restored)?;
    if fr.len() != sharp_features.len() {
        bail!(Shape, "expected {} sharp feature maps, got {}", fr.len(), sharp_features.len());
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(fr.len());
    for ((a, b), &w) in fr.iter().zip(sharp_features).zip(layer_weights) {
        let (l, mut g) = l2_loss_grad(a, b)?;
        total += w * l;
        g.scale_in_place(w);
        grads.push(g);
    }
    Ok((total, ex.backward_input(&cache, grads)?))
}

/// `adv_g + λ_X·feature + λ_2·l2`.
pub fn total_generator_loss(adv_g: f64, feature: f64, l2: f64, weights: &LossWeights) -> f64 {
    adv_g + weights.lambda_x * feature + weights.lambda_2 * l2
}

/// A scalar-per-sample critic whose input gradient is available.
pub trait CriticFn {
    /// Critic value of each sample in the batch.
    fn values(&self, x: &Tensor<f64>) -> Result<Vec<f64>>;
    /// Values and the gradient of their sum with respect to `x` (sample
    /// `i`'s slice is `∇ D(x_i)`).
    fn values_and_input_grad(&self, x: &Tensor<f64>) -> Result<(Vec<f64>, Tensor<f64>)>;
}

/// Per-sample interpolation `ε·real + (1−ε)·fake`, `ε ~ U(0,1)`.
pub fn interpolate(real: &Tensor<f64>, fake: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    same_shape(real, fake, "gradient penalty")?;
    let (n, _, _, _) = real.expect_rank4("gradient penalty input")?;
    let per = real.len() / n;
    let mut rng = rng::stream(seed, Purpose::Penalty, 0);
    let mut out = fake.clone();
    for b in 0..n {
        let e: f64 = rng.random();
        let r = &real.data()[b * per..(b + 1) * per];
        for (o, &rv) in out.data_mut()[b * per..(b + 1) * per].iter_mut().zip(r) {
            *o = e * rv + (1.0 - e) * *o;
        }
    }
    Ok(out)
}

fn per_sample_norms(g: &Tensor<f64>) -> Vec<f64> {
    let n = g.shape()[0];
    let per = g.len() / n;
    (0..n)
        .map(|b| libm::sqrt(g.data()[b * per..(b + 1) * per].iter().map(|v| v * v).sum::<f64>()))
        .collect()
}

/// `mean_i (‖∇D(x̂_i)‖₂ − 1)²` over interpolates `x̂`.
pub fn gradient_penalty(critic: &impl CriticFn, real: &Tensor<f64>, fake: &Tensor<f64>, seed: u64) -> Result<f64> {
    let xh = interpolate(real, fake, seed)?;
    let (_, g) = critic.values_and_input_grad(&xh)?;
    let norms = per_sample_norms(&g);
    Ok(norms.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() / norms.len() as f64)
}

/// `−(mean D(real) − mean D(fake)) + λ_GP · penalty`.
pub fn critic_loss(critic: &impl CriticFn, real: &Tensor<f64>, fake: &Tensor<f64>, lambda_gp: f64, seed: u64) -> Result<f64> {
    same_shape(real, fake, "critic loss")?;
    let dr = critic.values(real)?;
    let df = critic.values(fake)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gp = if lambda_gp == 0.0 {
        0.0
    } else {
        gradient_penalty(critic, real, fake, seed)?
    };
    Ok(-(mean(&dr) - mean(&df)) + lambda_gp * gp)
}

/// A [`Critic`] bound to its weights.
pub struct PatchCritic<'a> {
    pub critic: &'a Critic,
    pub params: &'a ParamStore,
}

/// Components of one critic objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticLoss {
    pub wasserstein: f64,
    pub penalty: f64,
    pub total: f64,
}

impl CriticFn for PatchCritic<'_> {
    fn values(&self, x: &Tensor<f64>) -> Result<Vec<f64>> {
        Ok(Critic::values(&self.critic.forward(self.params, x)?))
    }

    fn values_and_input_grad(&self, x: &Tensor<f64>) -> Result<(Vec<f64>, Tensor<f64>)> {
        let (scores, caches) = self.critic.forward_cached(self.params, x)?;
        let (_, _, h, w) = scores.dims4();
        let g = Tensor::full(scores.shape(), 1.0 / (h * w) as f64);
        let gx = self.critic.backward(self.params, &caches, g, None, true)?.expect("input gradient requested");
        Ok((Critic::values(&scores), gx))
    }
}

impl PatchCritic<'_> {
    /// Gradient with respect to `x` of `Σ_i k_i · D(x_i)`, plus parameter
    /// gradients of the same quantity.
    fn weighted_grads(&self, x: &Tensor<f64>, coef: &[f64]) -> Result<(Vec<f64>, Params<f64>)> {
        let (scores, caches) = self.critic.forward_cached(self.params, x)?;
        let (n, _, h, w) = scores.dims4();
        let mut g = Tensor::zeros(scores.shape());
        for b in 0..n {
            g.plane_mut(b, 0).fill(coef[b] / (h * w) as f64);
        }
        let mut grads = Params::new();
        self.critic.backward(self.params, &caches, g, Some(&mut grads), false)?;
        Ok((Critic::values(&scores), grads))
    }

    /// Critic objective and its parameter gradient.
    ///
    /// The penalty's weight gradient needs the mixed derivative
    /// `∂/∂θ ‖∇ₓD(x̂; θ)‖`. With `u_i = c_i·∇ₓD(x̂_i)` and
    /// `c_i = 2(‖g_i‖−1)/(N‖g_i‖)` it equals the directional derivative of
    /// `∇_θ Σ D` along `u`, which one forward+backward pass over dual
    /// numbers `x̂ + εu` yields exactly in the tangent part.
    pub fn loss_and_grads(
        &self,
        real: &Tensor<f64>,
        fake: &Tensor<f64>,
        lambda_gp: f64,
        seed: u64,
    ) -> Result<(CriticLoss, ParamStore)> {
        same_shape(real, fake, "critic loss")?;
        let n = real.shape()[0];
        let nf = n as f64;
        let (dr, mut grads) = self.weighted_grads(real, &vec![-1.0 / nf; n])?;
        let (df, gf) = self.weighted_grads(fake, &vec![1.0 / nf; n])?;
        for ((_, a), (_, b)) in grads.iter_mut().zip(gf.iter()) {
            a.add_assign(b);
        }
        let wasserstein = -(dr.iter().sum::<f64>() - df.iter().sum::<f64>()) / nf;

        let mut penalty = 0.0;
        if lambda_gp != 0.0 {
            let xh = interpolate(real, fake, seed)?;
            let (_, gx) = self.values_and_input_grad(&xh)?;
            let norms = per_sample_norms(&gx);
            penalty = norms.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() / nf;
            let per = gx.len() / n;
            let mut dual_in: Vec<Dual> = Vec::with_capacity(xh.len());
            for b in 0..n {
                let c = if norms[b] > 0.0 { 2.0 * (norms[b] - 1.0) / (nf * norms[b]) } else { 0.0 };
                for i in b * per..(b + 1) * per {
                    dual_in.push(Dual::new(xh.data()[i], c * gx.data()[i]));
                }
            }
            let x = Tensor::from_vec(xh.shape(), dual_in)?;
            let p = self.params.map(Dual::constant);
            let (scores, caches) = self.critic.forward_cached(&p, &x)?;
            let (_, _, h, w) = scores.dims4();
            let g = Tensor::full(scores.shape(), Dual::constant(1.0 / (h * w) as f64));
            let mut dgrads = Params::new();
            self.critic.backward(&p, &caches, g, Some(&mut dgrads), false)?;
            for ((_, a), (_, d)) in grads.iter_mut().zip(dgrads.iter()) {
                for (av, dv) in a.data_mut().iter_mut().zip(d.data()) {
                    *av += lambda_gp * dv.eps;
                }
            }
        }
        let grads = grads.aligned_to(self.params)?;
        Ok((
            CriticLoss {
                wasserstein,
                penalty,
                total: wasserstein + lambda_gp * penalty,
            },
            grads,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Sequential};
    use crate::features::Preprocess;

    /// `D(x) = k·⟨w, x⟩` per sample.
    struct Linear {
        w: Vec<f64>,
        k: f64,
    }

    impl CriticFn for Linear {
        fn values(&self, x: &Tensor<f64>) -> Result<Vec<f64>> {
            let n = x.shape()[0];
            let per = x.len() / n;
            Ok((0..n)
                .map(|b| self.k * x.data()[b * per..(b + 1) * per].iter().zip(&self.w).map(|(a, c)| a * c).sum::<f64>())
                .collect())
        }
        fn values_and_input_grad(&self, x: &Tensor<f64>) -> Result<(Vec<f64>, Tensor<f64>)> {
            let n = x.shape()[0];
            let g: Vec<f64> = (0..n).flat_map(|_| self.w.iter().map(|v| v * self.k)).collect();
            Ok((self.values(x)?, Tensor::from_vec(x.shape(), g)?))
        }
    }

    fn unit_linear(k: f64, len: usize) -> Linear {
        let raw: Vec<f64> = (0..len).map(|i| (i as f64 * 0.37).sin() + 0.1).collect();
        let nrm = libm::sqrt(raw.iter().map(|v| v * v).sum::<f64>());
        Linear {
            w: raw.iter().map(|v| v / nrm).collect(),
            k,
        }
    }

    fn ramp(shape: &[usize], a: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64) * a).sin()).collect()).unwrap()
    }

    #[test]
    fn penalty_of_unit_and_double_slope_critics() {
        let shape = [3, 3, 4, 4];
        let (r, f) = (ramp(&shape, 0.3), ramp(&shape, 0.7));
        let one = unit_linear(1.0, 48);
        assert!(gradient_penalty(&one, &r, &f, 0).unwrap().abs() < 1e-12);
        let two = unit_linear(2.0, 48);
        assert!((gradient_penalty(&two, &r, &f, 5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn critic_loss_hand_arithmetic() {
        // D(real)=3, D(fake)=1 on average; penalty (g-1)^2 with g = 1+sqrt(0.5)
        let g = 1.0 + libm::sqrt(0.5);
        let c = unit_linear(g, 4);
        let shape = [1, 4, 1, 1];
        let real = Tensor::from_vec(&shape, c.w.iter().map(|v| 3.0 * v / g).collect()).unwrap();
        let fake = Tensor::from_vec(&shape, c.w.iter().map(|v| 1.0 * v / g).collect()).unwrap();
        let loss = critic_loss(&c, &real, &fake, 10.0, 1).unwrap();
        assert!((loss - 3.0).abs() < 1e-12, "{loss}");
        assert_eq!(critic_loss(&c, &real, &real, 0.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn adv_loss_examples() {
        assert_eq!(generator_adv_loss(&Tensor::zeros(&[1, 1, 2, 2])).unwrap(), 0.0);
        assert_eq!(generator_adv_loss(&Tensor::full(&[2, 1, 3, 3], 2.5)).unwrap(), -2.5);
        let mixed = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        assert_eq!(generator_adv_loss(&mixed).unwrap(), -2.0);
        assert!(generator_adv_loss(&Tensor::zeros(&[0, 1, 1, 1])).is_err());
    }

    #[test]
    fn l2_examples() {
        let a = ramp(&[1, 3, 4, 4], 0.2);
        assert_eq!(l2_loss(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 0.5);
        assert!((l2_loss(&b, &a).unwrap() - 0.25).abs() < 1e-15);
        let c = a.map(|v| v + 1.0);
        assert!((l2_loss(&c, &a).unwrap() - 4.0 * 0.25).abs() < 1e-15);
        assert!(l2_loss(&a, &Tensor::zeros(&[1, 3, 4, 5])).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert_eq!(total_generator_loss(0.0, 0.0, 0.0, &w), 0.0);
        assert_eq!(w.lambda_x, 1.0);
        assert_eq!(w.lambda_gp, 10.0);
        let got = total_generator_loss(1.0, 0.5, 0.001, &w);
        assert!((got - 1.6).abs() < 1e-12);
    }

    #[test]
    fn single_tap_toy_extractor_matches_hand_computation() {
        // one 1×1 conv: out = 2·r + 1·g - 1·b + 0.5
        let net = Sequential::new(vec![Layer::conv("toy", 3, 1, 1, 1, 0)]);
        let mut p = ParamStore::new();
        p.insert("toy.weight", Tensor::from_vec(&[1, 3, 1, 1], vec![2.0, 1.0, -1.0]).unwrap()).unwrap();
        p.insert("toy.bias", Tensor::from_vec(&[1], vec![0.5]).unwrap()).unwrap();
        let ex = FeatureExtractor::new(net, vec![("toy".into(), 0)], Preprocess::Identity, p, 1).unwrap();
        let a = Tensor::from_vec(&[1, 3, 2, 2], vec![0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let b = Tensor::from_vec(&[1, 3, 2, 2], vec![0.0, 0.0, 0.0, 0.0, 0.1, 0.1, 0.1, 0.1, 0.0, 0.0, 0.0, 0.0]).unwrap();
        // per-pixel feature differences: 2·Δr + Δg − Δb
        let d = [0.2 - 0.1 - 0.5, 0.4 - 0.1 - 0.5, 0.6 - 0.1 - 0.5, 0.8 - 0.1 - 0.5];
        let want = d.iter().map(|v| v * v).sum::<f64>() / 4.0;
        let got = feature_loss(&ex, &a, &b, &[1.0]).unwrap();
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        assert!(feature_loss(&ex, &a, &b, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        let w = LossWeights {
            layer_weights: vec![0.5, 0.4],
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
        let s: f64 = LossWeights::default().layer_weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
