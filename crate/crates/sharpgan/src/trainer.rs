//! The training loop: data loading, epochs, loss log and checkpoints.
//!
//! Layout of an output directory:
//!
//! ```text
//! resolved_config.toml
//! loss_log.jsonl          one record per generator step
//! checkpoints/epoch_0001.ckpt
//! latest.ckpt             full training state, written every epoch and at exit
//! best.ckpt, best.json    only with a validation manifest
//! generator.ckpt          generator weights of the latest state
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sharpgan_core::image::Image;
use sharpgan_core::losses::LossBundle;
use sharpgan_core::rng::{stream, Purpose};
use sharpgan_core::train::{lr_schedule, make_batch, train_step, Models, TrainConfig, TrainState};

use crate::checkpoint::{read_train_state, write_store, write_train_state};
use crate::config::TrainSettings;
use crate::error::{Error, Result};
use crate::eval::{evaluate, load_pairs, EvalOptions, EvalPair};
use crate::io::{load_image, write_atomic};
use crate::manifest::PairManifest;

pub const LOSS_LOG: &str = "loss_log.jsonl";
pub const LATEST: &str = "latest.ckpt";
pub const BEST: &str = "best.ckpt";
pub const GENERATOR: &str = "generator.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub gp: f64,
    pub feature: f64,
    pub l2: f64,
    pub total_g: f64,
}

impl LogRecord {
    fn new(step: u64, epoch: usize, lr: f64, b: &LossBundle) -> Self {
        Self {
            step,
            epoch,
            lr,
            adv_g: b.adv_g,
            adv_d: b.adv_d,
            gp: b.gp,
            feature: b.feature,
            l2: b.l2,
            total_g: b.total_g,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct BestRecord {
    epoch: usize,
    psnr_db: f64,
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Loads every pair of a manifest as `(blurred, sharp)`.
pub fn load_training_pairs(manifest_path: &Path, min_scale: usize) -> Result<Vec<(Image, Image)>> {
    let m = PairManifest::read(manifest_path)?;
    if m.entries.is_empty() {
        return Err(Error::Usage(format!("manifest {} has no pairs", manifest_path.display())));
    }
    let mut pairs = Vec::with_capacity(m.entries.len());
    for (b, s) in m.resolve(manifest_path) {
        let blurred = load_image(&b)?;
        let sharp = load_image(&s)?;
        if !blurred.same_shape(&sharp) {
            return Err(Error::format(&b, "blurred and sharp images differ in size"));
        }
        if blurred.width().min(blurred.height()) < min_scale {
            warn!(
                "{} is {}×{}, smaller than the {min_scale}px crop; it will be upsized bicubically",
                b.display(),
                blurred.width(),
                blurred.height()
            );
        }
        pairs.push((blurred, sharp));
    }
    Ok(pairs)
}

/// Pair order of `epoch`, a seeded permutation.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Purpose::Shuffle, epoch as u64));
    order
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub steps_run: u64,
    pub latest: PathBuf,
}

pub struct Trainer {
    pub settings: TrainSettings,
    pub config: TrainConfig,
    pub models: Models,
    pub pairs: Vec<(Image, Image)>,
    pub val: Option<(Vec<EvalPair>, String)>,
    pub out_dir: PathBuf,
}

impl Trainer {
    pub fn new(settings: TrainSettings, manifest: &Path, out_dir: &Path) -> Result<Self> {
        let config = settings.train_config()?;
        let models = settings.models()?;
        let pairs = load_training_pairs(manifest, config.min_scale())?;
        let val = match &settings.val_manifest {
            Some(p) => Some((load_pairs(p)?, crate::eval::dataset_id(p)?)),
            None => None,
        };
        Ok(Self {
            settings,
            config,
            models,
            pairs,
            val,
            out_dir: out_dir.to_path_buf(),
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.pairs.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let full = self.steps_per_epoch() * self.config.epochs as u64;
        self.settings.max_steps.map_or(full, |m| m.min(full))
    }

    fn initial_state(&self, resume: Option<&Path>) -> Result<TrainState> {
        let Some(path) = resume else {
            return Ok(TrainState::new(&self.models, &self.config)?);
        };
        let state = read_train_state(path)?;
        let want = self.models.generator.config.canonical();
        let got = state.generator.meta.get("config").cloned().unwrap_or_default();
        if got != want {
            return Err(Error::format(path, format!("checkpoint generator is `{got}`, config asks for `{want}`")));
        }
        let want = self.models.critic.config.canonical();
        let got = state.critic.meta.get("config").cloned().unwrap_or_default();
        if got != want {
            return Err(Error::format(path, format!("checkpoint critic is `{got}`, config asks for `{want}`")));
        }
        if state.seed != self.config.seed {
            return Err(Error::format(path, format!("checkpoint seed {} differs from configured {}", state.seed, self.config.seed)));
        }
        Ok(state)
    }

    /// Opens the loss log, keeping exactly the first `steps` records.
    fn open_log(&self, steps: u64) -> Result<File> {
        let path = self.out_dir.join(LOSS_LOG);
        let mut kept = Vec::new();
        if steps > 0 {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for line in BufReader::new(f).lines().take(steps as usize) {
                kept.push(line.map_err(|e| Error::io(&path, e))?);
            }
            if (kept.len() as u64) < steps {
                return Err(Error::format(&path, format!("holds {} records, resume needs {steps}", kept.len())));
            }
        }
        let mut text = kept.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        write_atomic(&path, text.as_bytes())?;
        OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))
    }

    fn save(&self, state: &TrainState) -> Result<PathBuf> {
        let latest = self.out_dir.join(LATEST);
        write_train_state(&latest, state)?;
        write_store(&self.out_dir.join(GENERATOR), &state.generator)?;
        Ok(latest)
    }

    fn end_of_epoch(&self, state: &TrainState, epoch: usize) -> Result<()> {
        let ckpt = self.out_dir.join("checkpoints").join(format!("epoch_{:04}.ckpt", epoch + 1));
        write_train_state(&ckpt, state)?;
        let Some((pairs, id)) = &self.val else {
            return Ok(());
        };
        let report = evaluate(&state.generator, pairs, id, &EvalOptions { expect: None, save_dir: None })?;
        let psnr_db = report.aggregate.psnr_db;
        info!("epoch {}: validation PSNR {psnr_db:.3} dB", epoch + 1);
        let best_path = self.out_dir.join("best.json");
        let previous: Option<BestRecord> = fs::read_to_string(&best_path).ok().and_then(|t| serde_json::from_str(&t).ok());
        if previous.is_none_or(|b| psnr_db > b.psnr_db) {
            write_train_state(&self.out_dir.join(BEST), state)?;
            let rec = serde_json::to_string(&BestRecord { epoch: epoch + 1, psnr_db }).expect("serializes");
            write_atomic(&best_path, rec.as_bytes())?;
        }
        Ok(())
    }

    /// Runs until `total_steps()` generator steps have been taken overall,
    /// starting from scratch or from a saved state.
    pub fn run(&self, resume: Option<&Path>) -> Result<TrainOutcome> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let mut state = self.initial_state(resume)?;
        let mut log = self.open_log(state.step)?;
        let log_path = self.out_dir.join(LOSS_LOG);
        let spe = self.steps_per_epoch();
        let total = self.total_steps();
        let start = state.step;
        let mut order: Option<(usize, Vec<usize>)> = None;
        while state.step < total {
            let epoch = (state.step / spe) as usize;
            let slot = (state.step % spe) as usize;
            if order.as_ref().is_none_or(|(e, _)| *e != epoch) {
                order = Some((epoch, epoch_order(self.pairs.len(), self.config.seed, epoch)));
            }
            let idx = &order.as_ref().expect("set above").1;
            let b = self.config.batch_size;
            let chosen: Vec<(&Image, &Image)> = idx[slot * b..((slot + 1) * b).min(idx.len())]
                .iter()
                .map(|&i| (&self.pairs[i].0, &self.pairs[i].1))
                .collect();
            let batch = make_batch(&chosen, &self.config, state.step)?;
            let lr = lr_schedule(epoch, &self.config)?;
            state.epoch = epoch;
            let (next, bundle) = train_step(&self.models, state, &batch, &self.config, lr)?;
            state = next;
            let rec = serde_json::to_string(&LogRecord::new(state.step, epoch, lr, &bundle)).expect("serializes");
            writeln!(log, "{rec}").map_err(|e| Error::io(&log_path, e))?;
            if state.step % spe == 0 {
                info!("epoch {} done at step {}: l2 {:.5}, total_g {:.5}", epoch + 1, state.step, bundle.l2, bundle.total_g);
                log.flush().map_err(|e| Error::io(&log_path, e))?;
                self.end_of_epoch(&state, epoch)?;
                self.save(&state)?;
            }
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        let latest = self.save(&state)?;
        Ok(TrainOutcome {
            steps_run: state.step - start,
            state,
            latest,
        })
    }
}
