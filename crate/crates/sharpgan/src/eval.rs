//! Inference on whole images and evaluation reports.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sharpgan_core::image::{Image, ValueRange};
use sharpgan_core::metrics::{psnr, ssim, EvalReport, EvalRow, REFERENCE_NOTE, REFERENCE_TARGETS};
use sharpgan_core::networks::{Generator, GeneratorConfig};
use sharpgan_core::nn::{config_hash, ParamStore};

use crate::error::{Error, Result};
use crate::io::{load_image, save_png, write_atomic};
use crate::manifest::PairManifest;

/// Restores a `[0,1]` image of any size: reflect-pads to the generator's
/// size multiple, runs the forward pass and crops back. Returns the
/// restored image and the forward-pass wall time in seconds.
pub fn restore(generator: &Generator, params: &ParamStore, img: &Image) -> Result<(Image, f64)> {
    let m = generator.config.size_multiple();
    let (w, h) = (img.width(), img.height());
    let (pw, ph) = (w.div_ceil(m) * m - w, h.div_ceil(m) * m - h);
    let x = img.to_range(ValueRange::Signed).pad_reflect(ph, pw)?.to_tensor();
    let start = Instant::now();
    let y = generator.forward(params, &x)?;
    let seconds = start.elapsed().as_secs_f64();
    let out = Image::from_tensor(&y, 0, ValueRange::Signed)?.crop(0, 0, w, h)?;
    let mut out = out.to_range(ValueRange::Unit);
    out.clamp();
    Ok((out, seconds))
}

/// One evaluation pair, decoded.
pub struct EvalPair {
    pub name: String,
    pub blurred: Image,
    pub sharp: Image,
}

pub fn load_pairs(manifest_path: &Path) -> Result<Vec<EvalPair>> {
    let m = PairManifest::read(manifest_path)?;
    m.resolve(manifest_path)
        .into_iter()
        .map(|(b, s)| {
            let blurred = load_image(&b)?;
            let sharp = load_image(&s)?;
            if !blurred.same_shape(&sharp) {
                return Err(Error::format(
                    &b,
                    format!(
                        "blurred is {}×{} but its sharp image is {}×{}",
                        blurred.width(),
                        blurred.height(),
                        sharp.width(),
                        sharp.height()
                    ),
                ));
            }
            let name = b.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(EvalPair { name, blurred, sharp })
        })
        .collect()
}

/// Identifier of a manifest: its file name and a content hash.
pub fn dataset_id(manifest_path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let name = manifest_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(format!("{name}:{}", config_hash(&text)))
}

/// Short hash of the generator weights.
pub fn checkpoint_hash(params: &ParamStore) -> String {
    params.fingerprint()[..16].to_string()
}

pub struct EvalOptions<'a> {
    /// When set, the checkpoint's generator config must match.
    pub expect: Option<&'a GeneratorConfig>,
    pub save_dir: Option<&'a Path>,
}

/// Scores every pair, serially, so each timed forward pass runs alone.
pub fn evaluate(params: &ParamStore, pairs: &[EvalPair], dataset_id: &str, opts: &EvalOptions) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Usage("evaluation dataset is empty".into()));
    }
    let generator = Generator::from_params(params)?;
    if let Some(expect) = opts.expect {
        let (want, got) = (config_hash(&expect.canonical()), config_hash(&generator.config.canonical()));
        if want != got {
            return Err(Error::Usage(format!(
                "checkpoint config hash {got} ({}) does not match the configured {want} ({})",
                generator.config.canonical(),
                expect.canonical()
            )));
        }
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (restored, seconds) = restore(&generator, params, &p.blurred)?;
        if let Some(dir) = opts.save_dir {
            save_png(&dir.join(Path::new(&p.name).with_extension("png")), &restored)?;
        }
        rows.push(EvalRow {
            name: p.name.clone(),
            psnr_db: psnr(&restored, &p.sharp)?,
            ssim: ssim(&restored, &p.sharp)?,
            seconds,
        });
    }
    Ok(EvalReport::new(rows, checkpoint_hash(params), dataset_id.to_string())?)
}

#[derive(Serialize)]
struct RowJson<'a> {
    name: &'a str,
    psnr_db: f64,
    ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seconds: Option<f64>,
}

#[derive(Serialize)]
struct TargetJson {
    dataset: &'static str,
    psnr_db: f64,
    ssim: f64,
    seconds: f64,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    checkpoint_hash: &'a str,
    dataset_id: &'a str,
    rows: Vec<RowJson<'a>>,
    aggregate: RowJson<'a>,
    reference_note: &'static str,
    reference_targets: Vec<TargetJson>,
}

pub fn report_json(report: &EvalReport, with_timing: bool) -> String {
    let t = |s: f64| with_timing.then_some(s);
    let doc = ReportJson {
        checkpoint_hash: &report.checkpoint_hash,
        dataset_id: &report.dataset_id,
        rows: report
            .rows
            .iter()
            .map(|r| RowJson {
                name: &r.name,
                psnr_db: r.psnr_db,
                ssim: r.ssim,
                seconds: t(r.seconds),
            })
            .collect(),
        aggregate: RowJson {
            name: "mean",
            psnr_db: report.aggregate.psnr_db,
            ssim: report.aggregate.ssim,
            seconds: t(report.aggregate.seconds),
        },
        reference_note: REFERENCE_NOTE,
        reference_targets: REFERENCE_TARGETS
            .iter()
            .map(|r| TargetJson {
                dataset: r.dataset,
                psnr_db: r.psnr_db,
                ssim: r.ssim,
                seconds: r.seconds,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

/// Writes `report.json` and `report.txt` into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport, with_timing: bool) -> Result<(PathBuf, PathBuf)> {
    let json = dir.join("report.json");
    let txt = dir.join("report.txt");
    write_atomic(&json, report_json(report, with_timing).as_bytes())?;
    write_atomic(&txt, report.render_table(with_timing).as_bytes())?;
    Ok((json, txt))
}
