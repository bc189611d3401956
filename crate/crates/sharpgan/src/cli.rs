//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::checkpoint::read_generator;
use crate::config::{self, SynthSettings, TrainSettings};
use crate::deblur::{deblur_files, expand_inputs};
use crate::error::{Error, Result};
use crate::eval::{dataset_id, evaluate, load_pairs, write_report, EvalOptions};
use crate::synth::synthesize_pairs;
use crate::trainer::Trainer;

/// Motion deblurring with an RFB-s generator and a gradient-penalty critic.
///
/// Exit codes: 0 success, 2 usage or config error, 3 I/O
/// error (including some inputs of a batch failing), 4 malformed file,
/// 5 non-finite numbers during training.
#[derive(Debug, Parser)]
#[command(name = "sharpgan", version)]
pub struct Cli {
    /// More log output (repeat for debug and trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, as key=value with a TOML value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for --set seed=N.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn all_overrides(&self) -> Vec<String> {
        let mut o = self.overrides.clone();
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        o
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Blur a directory of sharp images into training pairs.
    Synth {
        #[arg(long)]
        sharp_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train on a pair manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training state to continue from (usually <out>/latest.ckpt).
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Restore image files with a trained generator.
    Deblur {
        /// Generator export or training state.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Image files or directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Score a generator on a pair manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leave the timing column out so reports are byte-stable.
        #[arg(long)]
        omit_timing: bool,
        /// Also write the restored images under <out>/restored.
        #[arg(long)]
        save_images: bool,
        /// Training config whose model settings the checkpoint must match.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Serialize)]
struct SynthSnapshot<'a> {
    sharp_dir: &'a PathBuf,
    #[serde(flatten)]
    settings: &'a SynthSettings,
}

#[derive(Serialize)]
struct TrainSnapshot<'a> {
    manifest: &'a PathBuf,
    resume: &'a Option<PathBuf>,
    #[serde(flatten)]
    settings: &'a TrainSettings,
}

#[derive(Serialize)]
struct DeblurSnapshot<'a> {
    checkpoint: &'a PathBuf,
    inputs: &'a [PathBuf],
}

#[derive(Serialize)]
struct EvalSnapshot<'a> {
    checkpoint: &'a PathBuf,
    manifest: &'a PathBuf,
    omit_timing: bool,
    save_images: bool,
    config: &'a Option<PathBuf>,
    overrides: &'a [String],
}

fn create_dir(p: &PathBuf) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { sharp_dir, out, config } => {
            let settings: SynthSettings = config::load(config.config.as_deref(), &config.all_overrides())?;
            let params = settings.blur_params()?;
            if !sharp_dir.is_dir() {
                return Err(Error::Usage(format!("sharp directory {} does not exist", sharp_dir.display())));
            }
            create_dir(&out)?;
            config::write_snapshot(&out, &SynthSnapshot { sharp_dir: &sharp_dir, settings: &settings })?;
            let m = synthesize_pairs(&sharp_dir, &out, &params, settings.seed)?;
            let c = m.counts();
            println!("pairs {} total_images {} skipped {}", c.pairs, c.total_images, c.skipped);
        }
        Command::Train { manifest, out, resume, config } => {
            let settings: TrainSettings = config::load(config.config.as_deref(), &config.all_overrides())?;
            create_dir(&out)?;
            config::write_snapshot(&out, &TrainSnapshot { manifest: &manifest, resume: &resume, settings: &settings })?;
            let trainer = Trainer::new(settings, &manifest, &out)?;
            info!(
                "{} pairs, {} steps per epoch, {} steps planned",
                trainer.pairs.len(),
                trainer.steps_per_epoch(),
                trainer.total_steps()
            );
            let outcome = trainer.run(resume.as_deref())?;
            println!("step {} ({} this run), state in {}", outcome.state.step, outcome.steps_run, outcome.latest.display());
        }
        Command::Deblur { checkpoint, out, inputs } => {
            let params = read_generator(&checkpoint)?;
            create_dir(&out)?;
            config::write_snapshot(&out, &DeblurSnapshot { checkpoint: &checkpoint, inputs: &inputs })?;
            let files = expand_inputs(&inputs)?;
            let written = deblur_files(&params, &files, &out)?;
            println!("restored {} images into {}", written.len(), out.display());
        }
        Command::Eval { checkpoint, manifest, out, omit_timing, save_images, config: cfg_path, overrides } => {
            let expect = match (&cfg_path, overrides.is_empty()) {
                (None, true) => None,
                _ => Some(config::load::<TrainSettings>(cfg_path.as_deref(), &overrides)?.generator_config()),
            };
            let params = read_generator(&checkpoint)?;
            create_dir(&out)?;
            config::write_snapshot(
                &out,
                &EvalSnapshot {
                    checkpoint: &checkpoint,
                    manifest: &manifest,
                    omit_timing,
                    save_images,
                    config: &cfg_path,
                    overrides: &overrides,
                },
            )?;
            let pairs = load_pairs(&manifest)?;
            let save_dir = out.join("restored");
            let opts = EvalOptions {
                expect: expect.as_ref(),
                save_dir: save_images.then_some(save_dir.as_path()),
            };
            let report = evaluate(&params, &pairs, &dataset_id(&manifest)?, &opts)?;
            write_report(&out, &report, !omit_timing)?;
            print!("{}", report.render_table(!omit_timing));
        }
    }
    Ok(())
}
