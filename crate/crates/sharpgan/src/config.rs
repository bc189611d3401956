//! Flat TOML run configuration with `key=value` overrides.
//!
//! Every key is optional and falls back to its default; unknown keys are
//! rejected. Overrides are parsed as TOML values (`lr_initial=2e-4`,
//! `crop_scales=[64]`), with bare words accepted as strings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sharpgan_core::blur::BlurParams;
use sharpgan_core::features::{FeatureExtractor, DEFAULT_TAPS};
use sharpgan_core::losses::LossWeights;
use sharpgan_core::networks::{Critic, DiscriminatorConfig, Generator, GeneratorConfig};
use sharpgan_core::optim::AdamConfig;
use sharpgan_core::train::{Models, TrainConfig};
use toml::{Table, Value};

use crate::checkpoint::read_store;
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub length_min: usize,
    pub length_max: usize,
    pub angle_min: f64,
    pub angle_max: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let b = BlurParams::default();
        Self {
            length_min: b.length_min,
            length_max: b.length_max,
            angle_min: b.angle_min,
            angle_max: b.angle_max,
            noise_sigma: b.noise_sigma,
            seed: 0,
        }
    }
}

impl SynthSettings {
    pub fn blur_params(&self) -> Result<BlurParams> {
        let p = BlurParams {
            length_min: self.length_min,
            length_max: self.length_max,
            angle_min: self.angle_min,
            angle_max: self.angle_max,
            noise_sigma: self.noise_sigma,
        };
        p.validate().map_err(usage)?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub decay_start_epoch: usize,
    pub batch_size: usize,
    pub crop_scales: Vec<usize>,
    pub critic_steps_per_gen: usize,
    pub seed: u64,
    /// Stop after this many generator steps, even mid-epoch.
    pub max_steps: Option<u64>,

    pub lambda_gp: f64,
    pub lambda_x: f64,
    pub lambda_2: f64,
    pub layer_weights: Vec<f64>,

    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub base_channels: usize,
    pub n_rfbs: usize,
    pub rfb_channels: usize,
    pub downsample_steps: usize,
    pub dilation_rates: [usize; 4],
    pub critic_channels: Vec<usize>,

    pub feature_taps: Vec<String>,
    /// Named-tensor file with `convX_Y.weight`/`.bias`; random weights when
    /// absent.
    pub feature_weights: Option<PathBuf>,
    pub feature_width_divisor: usize,
    pub feature_seed: u64,

    /// Pair manifest scored after every epoch to pick `best.ckpt`.
    pub val_manifest: Option<PathBuf>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        let g = GeneratorConfig::default();
        Self {
            epochs: t.epochs,
            lr_initial: t.lr_initial,
            lr_final: t.lr_final,
            decay_start_epoch: t.decay_start_epoch,
            batch_size: t.batch_size,
            crop_scales: t.crop_scales,
            critic_steps_per_gen: t.critic_steps_per_gen,
            seed: t.seed,
            max_steps: None,
            lambda_gp: t.loss_weights.lambda_gp,
            lambda_x: t.loss_weights.lambda_x,
            lambda_2: t.loss_weights.lambda_2,
            layer_weights: t.loss_weights.layer_weights,
            adam_beta1: t.adam.beta1,
            adam_beta2: t.adam.beta2,
            adam_eps: t.adam.eps,
            base_channels: g.base_channels,
            n_rfbs: g.n_rfbs,
            rfb_channels: g.rfb_channels,
            downsample_steps: g.downsample_steps,
            dilation_rates: g.dilation_rates,
            critic_channels: DiscriminatorConfig::default().channel_plan,
            feature_taps: DEFAULT_TAPS.iter().map(|s| s.to_string()).collect(),
            feature_weights: None,
            feature_width_divisor: 1,
            feature_seed: 0,
            val_manifest: None,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Error {
    Error::Usage(e.to_string())
}

impl TrainSettings {
    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            lr_initial: self.lr_initial,
            lr_final: self.lr_final,
            decay_start_epoch: self.decay_start_epoch,
            batch_size: self.batch_size,
            crop_scales: self.crop_scales.clone(),
            critic_steps_per_gen: self.critic_steps_per_gen,
            seed: self.seed,
            loss_weights: LossWeights {
                lambda_gp: self.lambda_gp,
                lambda_x: self.lambda_x,
                lambda_2: self.lambda_2,
                layer_weights: self.layer_weights.clone(),
            },
            adam: AdamConfig {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
        };
        cfg.validate().map_err(usage)?;
        if self.layer_weights.len() != self.feature_taps.len() {
            return Err(usage(format!(
                "{} layer weights for {} feature taps",
                self.layer_weights.len(),
                self.feature_taps.len()
            )));
        }
        Ok(cfg)
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            base_channels: self.base_channels,
            n_rfbs: self.n_rfbs,
            rfb_channels: self.rfb_channels,
            downsample_steps: self.downsample_steps,
            dilation_rates: self.dilation_rates,
        }
    }

    pub fn critic_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            channel_plan: self.critic_channels.clone(),
        }
    }

    pub fn models(&self) -> Result<Models> {
        let generator = Generator::new(self.generator_config()).map_err(usage)?;
        let critic = Critic::new(self.critic_config()).map_err(usage)?;
        let taps: Vec<&str> = self.feature_taps.iter().map(String::as_str).collect();
        let extractor = match &self.feature_weights {
            Some(path) => FeatureExtractor::vgg19_from_params(&taps, read_store(path)?),
            None => FeatureExtractor::vgg19_random(&taps, self.feature_width_divisor, self.feature_seed),
        }
        .map_err(usage)?;
        let min = self.crop_scales.iter().copied().min().unwrap_or(0);
        let need = critic.config.min_input().max(extractor.min_side);
        if min < need {
            return Err(usage(format!(
                "smallest crop scale {min} is below the {need}-pixel minimum of the critic and feature extractor"
            )));
        }
        Ok(Models {
            generator,
            critic,
            extractor,
        })
    }
}

/// Applies `key=value` overrides to a parsed table.
pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else {
            return Err(usage(format!("override `{o}` is not of the form key=value")));
        };
        let (k, v) = (k.trim(), v.trim());
        let value = match format!("v = {v}").parse::<Table>() {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => Value::String(v.to_string()),
        };
        table.insert(k.to_string(), value);
    }
    Ok(())
}

/// Reads an optional config file, applies overrides and deserializes.
pub fn load<T: DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> Result<T> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<Table>().map_err(|e| Error::format(p, e.to_string()))?
        }
        None => Table::new(),
    };
    apply_overrides(&mut table, overrides)?;
    T::deserialize(table).map_err(|e| usage(format!("config: {e}")))
}

/// Writes `resolved_config.toml` into `dir`.
pub fn write_snapshot<T: Serialize>(dir: &Path, cfg: &T) -> Result<PathBuf> {
    let path = dir.join("resolved_config.toml");
    let text = toml::to_string(cfg).map_err(|e| Error::format(&path, e.to_string()))?;
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}
