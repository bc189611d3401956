//! PSNR, SSIM and evaluation reports.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{bail, Result};
use crate::image::{Image, ValueRange};

/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(a: &Image, b: &Image, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        bail!(
            Shape,
            "{what}: image sizes differ ({}×{} vs {}×{})",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        );
    }
    if a.range() != ValueRange::Unit || b.range() != ValueRange::Unit {
        bail!(Param, "{what}: images must be in the [0,1] range");
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB with peak 1, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b, "psnr")?;
    let n = a.pixels().len() as f64;
    let mse = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * libm::log10(1.0 / mse)).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
        })
        .collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in &g {
        for x in &g {
            w.push(y * x / (s * s));
        }
    }
    w
}

/// Mean SSIM over every fully-contained 11×11 Gaussian window (σ = 1.5),
/// computed per RGB channel and averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b, "ssim")?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        bail!(Param, "ssim needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {w}×{h}");
    }
    let win = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for c in 0..3 {
        let mut acc = 0.0;
        for y0 in 0..oh {
            for x0 in 0..ow {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let g = win[dy * SSIM_WINDOW + dx];
                        let va = a.get(x0 + dx, y0 + dy, c);
                        let vb = b.get(x0 + dx, y0 + dy, c);
                        ma += g * va;
                        mb += g * vb;
                        saa += g * va * va;
                        sbb += g * vb * vb;
                        sab += g * (va * vb);
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total += acc / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub psnr_db: f64,
    pub ssim: f64,
    pub seconds: f64,
}

/// A published result kept for comparison in report footers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceTarget {
    pub dataset: &'static str,
    pub psnr_db: f64,
    pub ssim: f64,
    pub seconds: f64,
}

pub const REFERENCE_TARGETS: [ReferenceTarget; 2] = [
    ReferenceTarget {
        dataset: "GOPRO",
        psnr_db: 29.62,
        ssim: 0.897,
        seconds: 0.17,
    },
    ReferenceTarget {
        dataset: "SMD",
        psnr_db: 31.90,
        ssim: 0.837,
        seconds: 0.37,
    },
];

pub const REFERENCE_NOTE: &str = "not reproduced at desk scale";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregate: Aggregate,
    pub checkpoint_hash: String,
    pub dataset_id: String,
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>, checkpoint_hash: String, dataset_id: String) -> Result<Self> {
        if rows.is_empty() {
            bail!(Param, "evaluation report needs at least one row");
        }
        let n = rows.len() as f64;
        let aggregate = Aggregate {
            psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            seconds: rows.iter().map(|r| r.seconds).sum::<f64>() / n,
        };
        Ok(Self {
            rows,
            aggregate,
            checkpoint_hash,
            dataset_id,
        })
    }

    /// Aligned text table (`Image | PSNR | SSIM | Time`). With
    /// `with_timing == false` the time column is left out, which makes the
    /// rendering a pure function of the inputs and checkpoint.
    pub fn render_table(&self, with_timing: bool) -> String {
        let name_w = self.rows.iter().map(|r| r.name.chars().count()).chain([9]).max().unwrap_or(9);
        let mut out = String::new();
        let _ = writeln!(out, "checkpoint {}  dataset {}", self.checkpoint_hash, self.dataset_id);
        let line = |out: &mut String, name: &str, p: String, s: String, t: String| {
            let _ = write!(out, "{name:<name_w$} | {p:>9} | {s:>7}");
            if with_timing {
                let _ = write!(out, " | {t:>9}");
            }
            out.push('\n');
        };
        line(&mut out, "Image", "PSNR (dB)".into(), "SSIM".into(), "Time (s)".into());
        let rule_len = name_w + 22 + if with_timing { 12 } else { 0 };
        out.push_str(&"-".repeat(rule_len));
        out.push('\n');
        for r in &self.rows {
            line(&mut out, &r.name, format!("{:.2}", r.psnr_db), format!("{:.4}", r.ssim), format!("{:.4}", r.seconds));
        }
        out.push_str(&"-".repeat(rule_len));
        out.push('\n');
        let a = &self.aggregate;
        line(&mut out, "mean", format!("{:.2}", a.psnr_db), format!("{:.4}", a.ssim), format!("{:.4}", a.seconds));
        let _ = writeln!(out, "\nreference targets ({REFERENCE_NOTE}):");
        for t in REFERENCE_TARGETS {
            line(&mut out, t.dataset, format!("{:.2}", t.psnr_db), format!("{:.3}", t.ssim), format!("{:.2}", t.seconds));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_image(w: usize, h: usize, k: u64) -> Image {
        Image::from_fn(w, h, ValueRange::Unit, |x, y, c| {
            let v = (x as u64 * 73 + y as u64 * 151 + c as u64 * 31 + k * 17) % 97;
            v as f64 / 96.0
        })
        .unwrap()
    }

    #[test]
    fn psnr_at_known_mse() {
        let a = Image::filled(8, 8, ValueRange::Unit, 0.5).unwrap();
        let b = Image::filled(8, 8, ValueRange::Unit, 0.6).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_self_and_constant() {
        let a = noise_image(16, 13, 1);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let (c1, c2) = (0.3, 0.7);
        let x = Image::filled(12, 12, ValueRange::Unit, c1).unwrap();
        let y = Image::filled(12, 12, ValueRange::Unit, c2).unwrap();
        let k = SSIM_K1 * SSIM_K1;
        let want = (2.0 * c1 * c2 + k) / (c1 * c1 + c2 * c2 + k);
        assert!((ssim(&x, &y).unwrap() - want).abs() < 1e-6);
        assert!(ssim(&Image::filled(10, 20, ValueRange::Unit, 0.1).unwrap(), &Image::filled(10, 20, ValueRange::Unit, 0.1).unwrap()).is_err());
    }

    #[test]
    fn report_aggregates_and_renders() {
        let rows = (0..3)
            .map(|i| EvalRow {
                name: format!("img{i}.png"),
                psnr_db: 20.0 + i as f64,
                ssim: 0.5 + 0.1 * i as f64,
                seconds: 0.01 * (i + 1) as f64,
            })
            .collect();
        let r = EvalReport::new(rows, "abc".into(), "ds".into()).unwrap();
        assert!((r.aggregate.psnr_db - 21.0).abs() < 1e-9);
        assert!((r.aggregate.seconds - 0.02).abs() < 1e-9);
        let t = r.render_table(false);
        assert!(t.contains(REFERENCE_NOTE) && t.contains("31.90") && !t.contains("Time"));
        assert!(r.render_table(true).contains("Time (s)"));
        assert!(EvalReport::new(Vec::new(), String::new(), String::new()).is_err());
    }
}
