//! Training protocol: learning-rate schedule, paired random crops with flip
//! augmentation, alternating critic/generator updates and the resumable
//! training state.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::error::{bail, Error, Result};
use crate::features::FeatureExtractor;
use crate::image::{batch_tensor, Image, ValueRange};
use crate::losses::{self, LossBundle, LossWeights, PatchCritic};
use crate::networks::{Critic, Generator};
use crate::nn::ParamStore;
use crate::optim::{Adam, AdamConfig};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub decay_start_epoch: usize,
    pub batch_size: usize,
    pub crop_scales: Vec<usize>,
    pub critic_steps_per_gen: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr_initial: 1e-4,
            lr_final: 1e-5,
            decay_start_epoch: 250,
            batch_size: 1,
            crop_scales: vec![256, 384, 512, 640],
            critic_steps_per_gen: 5,
            seed: 0,
            loss_weights: LossWeights::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            bail!(Config, "epochs must be at least 1");
        }
        if self.decay_start_epoch > self.epochs {
            bail!(Config, "decay_start_epoch {} exceeds epochs {}", self.decay_start_epoch, self.epochs);
        }
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be at least 1");
        }
        if self.crop_scales.is_empty() || self.crop_scales.iter().any(|s| *s == 0 || s % 4 != 0) {
            bail!(Config, "crop scales must be non-empty positive multiples of 4, got {:?}", self.crop_scales);
        }
        if !(self.lr_initial >= 0.0) || !(self.lr_final >= 0.0) || !self.lr_initial.is_finite() || !self.lr_final.is_finite() {
            bail!(Config, "learning rates must be finite and non-negative");
        }
        self.loss_weights.validate()?;
        self.adam.validate()
    }

    pub fn min_scale(&self) -> usize {
        self.crop_scales.iter().copied().min().unwrap_or(0)
    }
}

/// `lr_initial` before `decay_start_epoch`, then linear down to `lr_final`
/// at the last epoch (`epochs - 1`).
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        bail!(Param, "epoch {epoch} is outside 0..{}", cfg.epochs);
    }
    if epoch < cfg.decay_start_epoch {
        return Ok(cfg.lr_initial);
    }
    let last = cfg.epochs - 1;
    if last == cfg.decay_start_epoch {
        return Ok(cfg.lr_final);
    }
    let t = (epoch - cfg.decay_start_epoch) as f64 / (last - cfg.decay_start_epoch) as f64;
    Ok(cfg.lr_initial + (cfg.lr_final - cfg.lr_initial) * t)
}

/// Geometry applied to one training pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropInfo {
    pub scale: usize,
    pub x0: usize,
    pub y0: usize,
    pub hflip: bool,
    pub vflip: bool,
    /// The source pair was bicubically enlarged to reach the smallest scale.
    pub resized: bool,
}

fn enlarge_to(img: &Image, min_side: usize) -> Result<Image> {
    let (w, h) = (img.width(), img.height());
    let short = w.min(h);
    let nw = libm::round((w * min_side) as f64 / short as f64) as usize;
    let nh = libm::round((h * min_side) as f64 / short as f64) as usize;
    img.resize_bicubic(nw.max(min_side), nh.max(min_side))
}

fn apply_crop(img: &Image, c: &CropInfo) -> Result<Image> {
    let mut out = img.crop(c.x0, c.y0, c.scale, c.scale)?;
    if c.hflip {
        out = out.flip_horizontal();
    }
    if c.vflip {
        out = out.flip_vertical();
    }
    Ok(out)
}

/// Crops the same square window from both images and applies the same
/// horizontal/vertical flips (each with probability ½). The side is drawn
/// uniformly from `allowed` (or from the configured scales that fit).
fn crop_pair_with(
    blurred: &Image,
    sharp: &Image,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
    forced_scale: Option<usize>,
) -> Result<(Image, Image, CropInfo)> {
    if !blurred.same_shape(sharp) {
        bail!(
            Shape,
            "pair sizes differ: blurred {}×{}, sharp {}×{}",
            blurred.width(),
            blurred.height(),
            sharp.width(),
            sharp.height()
        );
    }
    let min_scale = forced_scale.unwrap_or_else(|| cfg.min_scale());
    let (mut b, mut s) = (blurred.clone(), sharp.clone());
    let resized = b.width().min(b.height()) < min_scale;
    if resized {
        b = enlarge_to(&b, min_scale)?;
        s = enlarge_to(&s, min_scale)?;
    }
    let short = b.width().min(b.height());
    let scale = match forced_scale {
        Some(sc) => sc,
        None => {
            let fits: Vec<usize> = cfg.crop_scales.iter().copied().filter(|&sc| sc <= short).collect();
            fits[rng.random_range(0..fits.len())]
        }
    };
    let info = CropInfo {
        scale,
        x0: rng.random_range(0..=b.width() - scale),
        y0: rng.random_range(0..=b.height() - scale),
        hflip: rng.random_bool(0.5),
        vflip: rng.random_bool(0.5),
        resized,
    };
    Ok((apply_crop(&b, &info)?, apply_crop(&s, &info)?, info))
}

/// One augmented training pair, deterministic in `seed`.
pub fn sample_training_pair(blurred: &Image, sharp: &Image, cfg: &TrainConfig, seed: u64) -> Result<(Image, Image, CropInfo)> {
    let mut rng = rng::stream(seed, Purpose::Crop, 0);
    crop_pair_with(blurred, sharp, cfg, &mut rng, None)
}

/// A batch in the network domain (`[-1,1]`, `N×3×S×S`).
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub blurred: Tensor<f64>,
    pub sharp: Tensor<f64>,
    pub crops: Vec<CropInfo>,
}

/// Crops every pair at one shared scale (drawn for the first pair) so the
/// batch stacks. Randomness is keyed by `(cfg.seed, step)`.
pub fn make_batch(pairs: &[(&Image, &Image)], cfg: &TrainConfig, step: u64) -> Result<Batch> {
    if pairs.is_empty() {
        bail!(Param, "cannot build an empty batch");
    }
    let mut rng = rng::stream(cfg.seed, Purpose::Crop, step);
    let (b0, s0, c0) = crop_pair_with(pairs[0].0, pairs[0].1, cfg, &mut rng, None)?;
    let (mut bs, mut ss, mut crops) = (vec![b0], vec![s0], vec![c0]);
    for (b, s) in &pairs[1..] {
        let (bc, sc, c) = crop_pair_with(b, s, cfg, &mut rng, Some(c0.scale))?;
        bs.push(bc);
        ss.push(sc);
        crops.push(c);
    }
    let br: Vec<&Image> = bs.iter().collect();
    let sr: Vec<&Image> = ss.iter().collect();
    Ok(Batch {
        blurred: batch_tensor(&br, ValueRange::Signed)?,
        sharp: batch_tensor(&sr, ValueRange::Signed)?,
        crops,
    })
}

/// Immutable network definitions used by a training run.
pub struct Models {
    pub generator: Generator,
    pub critic: Critic,
    pub extractor: FeatureExtractor,
}

/// Generator objective terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorLoss {
    pub adv: f64,
    pub feature: f64,
    pub l2: f64,
    pub total: f64,
}

/// `adv_g + λ_X·feature + λ_2·l2` through the training-graph generator, and
/// its gradient with respect to every generator parameter.
pub fn generator_objective(
    models: &Models,
    gen: &ParamStore,
    critic: &ParamStore,
    blurred: &Tensor<f64>,
    sharp: &Tensor<f64>,
    weights: &LossWeights,
) -> Result<(GeneratorLoss, ParamStore)> {
    let (fake, gcache) = models.generator.forward_train(gen, blurred)?;
    let (scores, ccache) = models.critic.forward_cached(critic, &fake)?;
    let adv = losses::generator_adv_loss(&scores)?;
    let mut g = models
        .critic
        .backward(critic, &ccache, Tensor::full(scores.shape(), -1.0 / scores.len() as f64), None, true)?
        .expect("input gradient requested");
    let sharp_feats = models.extractor.extract(sharp)?;
    let (feature, mut gf) = losses::feature_loss_grad(&models.extractor, &fake, &sharp_feats, &weights.layer_weights)?;
    let (l2, mut gl) = losses::l2_loss_grad(&fake, sharp)?;
    gf.scale_in_place(weights.lambda_x);
    gl.scale_in_place(weights.lambda_2);
    g.add_assign(&gf);
    g.add_assign(&gl);
    let grads = models.generator.backward(gen, &gcache, &g)?.aligned_to(gen)?;
    Ok((
        GeneratorLoss {
            adv,
            feature,
            l2,
            total: losses::total_generator_loss(adv, feature, l2, weights),
        },
        grads,
    ))
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub generator: ParamStore,
    pub critic: ParamStore,
    pub gen_opt: Adam,
    pub critic_opt: Adam,
    /// Epoch the next step belongs to.
    pub epoch: usize,
    /// Generator updates performed so far.
    pub step: u64,
    /// Base seed of every random stream in the run.
    pub seed: u64,
}

fn check_finite(store: &ParamStore, what: &str) -> Result<()> {
    match store.first_non_finite() {
        Some(name) => Err(Error::NonFinite(format!("{what} `{name}`"))),
        None => Ok(()),
    }
}

impl TrainState {
    pub fn new(models: &Models, cfg: &TrainConfig) -> Result<Self> {
        let generator = models.generator.init(cfg.seed)?;
        let critic = models.critic.init(cfg.seed)?;
        Ok(Self {
            gen_opt: Adam::new(&generator, cfg.adam),
            critic_opt: Adam::new(&critic, cfg.adam),
            generator,
            critic,
            epoch: 0,
            step: 0,
            seed: cfg.seed,
        })
    }

    /// Flattens the state into one named-tensor archive.
    pub fn to_archive(&self) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        let parts: [(&str, &ParamStore); 6] = [
            ("generator", &self.generator),
            ("critic", &self.critic),
            ("opt.generator.m", &self.gen_opt.m),
            ("opt.generator.v", &self.gen_opt.v),
            ("opt.critic.m", &self.critic_opt.m),
            ("opt.critic.v", &self.critic_opt.v),
        ];
        for (prefix, store) in parts {
            for (name, t) in store.iter() {
                out.insert(&format!("{prefix}/{name}"), t.clone())?;
            }
        }
        for (k, v) in &self.generator.meta {
            out.meta.insert(format!("generator.{k}"), v.clone());
        }
        for (k, v) in &self.critic.meta {
            out.meta.insert(format!("critic.{k}"), v.clone());
        }
        let adam = |a: &Adam| format!("{:e}/{:e}/{:e}/{}", a.config.beta1, a.config.beta2, a.config.eps, a.t);
        out.meta.insert("kind".into(), "train_state".into());
        out.meta.insert("state.epoch".into(), self.epoch.to_string());
        out.meta.insert("state.step".into(), self.step.to_string());
        out.meta.insert("state.seed".into(), self.seed.to_string());
        out.meta.insert("opt.generator".into(), adam(&self.gen_opt));
        out.meta.insert("opt.critic".into(), adam(&self.critic_opt));
        Ok(out)
    }

    pub fn from_archive(archive: &ParamStore) -> Result<Self> {
        if archive.meta.get("kind").map(String::as_str) != Some("train_state") {
            bail!(Format, "checkpoint does not hold a training state");
        }
        let section = |prefix: &str, meta_prefix: Option<&str>| -> Result<ParamStore> {
            let mut s = ParamStore::new();
            let p = format!("{prefix}/");
            for (name, t) in archive.iter() {
                if let Some(rest) = name.strip_prefix(&p) {
                    s.insert(rest, t.clone())?;
                }
            }
            if let Some(mp) = meta_prefix {
                let mp = format!("{mp}.");
                for (k, v) in &archive.meta {
                    if let Some(rest) = k.strip_prefix(&mp) {
                        s.meta.insert(rest.into(), v.clone());
                    }
                }
            }
            Ok(s)
        };
        let meta = |k: &str| -> Result<&str> {
            archive
                .meta
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("training state is missing `{k}`")))
        };
        let num = |k: &str| -> Result<u64> {
            meta(k)?.parse().map_err(|_| Error::Format(format!("`{k}` is not an integer")))
        };
        let adam = |k: &str, layout: &ParamStore, m: ParamStore, v: ParamStore| -> Result<Adam> {
            let f: Vec<&str> = meta(k)?.split('/').collect();
            let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad optimizer record `{k}`")));
            if f.len() != 4 {
                bail!(Format, "bad optimizer record `{k}`");
            }
            layout.check_layout(&m)?;
            layout.check_layout(&v)?;
            Ok(Adam {
                config: AdamConfig {
                    beta1: parse(f[0])?,
                    beta2: parse(f[1])?,
                    eps: parse(f[2])?,
                },
                m,
                v,
                t: f[3].parse().map_err(|_| Error::Format(format!("bad optimizer record `{k}`")))?,
            })
        };
        let generator = section("generator", Some("generator"))?;
        let critic = section("critic", Some("critic"))?;
        Generator::from_params(&generator)?;
        Critic::from_params(&critic)?;
        let gen_opt = adam("opt.generator", &generator, section("opt.generator.m", None)?, section("opt.generator.v", None)?)?;
        let critic_opt = adam("opt.critic", &critic, section("opt.critic.m", None)?, section("opt.critic.v", None)?)?;
        Ok(Self {
            generator,
            critic,
            gen_opt,
            critic_opt,
            epoch: num("state.epoch")? as usize,
            step: num("state.step")?,
            seed: num("state.seed")?,
        })
    }
}

/// `critic_steps_per_gen` critic updates against the current generator's
/// output. Records `adv_d` and `gp` of the last critic iteration.
pub fn critic_phase(models: &Models, state: &mut TrainState, batch: &Batch, cfg: &TrainConfig, lr: f64, out: &mut LossBundle) -> Result<()> {
    let fake = models.generator.forward_train(&state.generator, &batch.blurred)?.0;
    let k_max = cfg.critic_steps_per_gen as u64;
    for k in 0..k_max {
        let gp_seed = rng::stream(state.seed, Purpose::Penalty, state.step * k_max + k).next_u64();
        let pc = PatchCritic {
            critic: &models.critic,
            params: &state.critic,
        };
        let (closs, grads) = pc.loss_and_grads(&batch.sharp, &fake, cfg.loss_weights.lambda_gp, gp_seed)?;
        if !closs.total.is_finite() {
            bail!(NonFinite, "critic loss at step {} (critic iteration {k})", state.step);
        }
        check_finite(&grads, "critic gradient")?;
        state.critic_opt.step(&mut state.critic, &grads, lr)?;
        check_finite(&state.critic, "critic parameter")?;
        out.adv_d = closs.wasserstein;
        out.gp = closs.penalty;
    }
    Ok(())
}

/// One generator update on the full objective; increments the step counter.
pub fn generator_phase(models: &Models, state: &mut TrainState, batch: &Batch, cfg: &TrainConfig, lr: f64, out: &mut LossBundle) -> Result<()> {
    let (gl, grads) = generator_objective(
        models,
        &state.generator,
        &state.critic,
        &batch.blurred,
        &batch.sharp,
        &cfg.loss_weights,
    )?;
    out.adv_g = gl.adv;
    out.feature = gl.feature;
    out.l2 = gl.l2;
    out.total_g = gl.total;
    if let Some(field) = out.first_non_finite() {
        bail!(NonFinite, "loss `{field}` at step {}", state.step);
    }
    check_finite(&grads, "generator gradient")?;
    state.gen_opt.step(&mut state.generator, &grads, lr)?;
    check_finite(&state.generator, "generator parameter")?;
    state.step += 1;
    Ok(())
}

/// Critic phase followed by one generator update, at learning rate `lr`.
pub fn train_step(models: &Models, mut state: TrainState, batch: &Batch, cfg: &TrainConfig, lr: f64) -> Result<(TrainState, LossBundle)> {
    let mut bundle = LossBundle::default();
    critic_phase(models, &mut state, batch, cfg, lr, &mut bundle)?;
    generator_phase(models, &mut state, batch, cfg, lr, &mut bundle)?;
    Ok((state, bundle))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg).unwrap(), 1e-4);
        assert_eq!(lr_schedule(249, &cfg).unwrap(), 1e-4);
        assert_eq!(lr_schedule(250, &cfg).unwrap(), 1e-4);
        assert!((lr_schedule(499, &cfg).unwrap() - 1e-5).abs() < 1e-18);
        // 1e-4 + (1e-5 - 1e-4)·124/249
        let want = 1e-4 - 9e-5 * 124.0 / 249.0;
        assert!((lr_schedule(374, &cfg).unwrap() - want).abs() < 1e-18);
        assert!((want - 5.518e-5).abs() < 1e-8);
        assert!(lr_schedule(500, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            crop_scales: vec![250],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            decay_start_epoch: 600,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn small_images_are_enlarged() {
        let cfg = TrainConfig {
            crop_scales: vec![32],
            ..TrainConfig::default()
        };
        let im = Image::filled(20, 30, ValueRange::Unit, 0.25).unwrap();
        let (b, s, info) = sample_training_pair(&im, &im, &cfg, 1).unwrap();
        assert!(info.resized);
        assert_eq!((b.width(), s.height()), (32, 32));
        let other = Image::filled(21, 30, ValueRange::Unit, 0.25).unwrap();
        assert!(sample_training_pair(&im, &other, &cfg, 1).is_err());
    }
}
