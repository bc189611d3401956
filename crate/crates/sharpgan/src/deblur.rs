//! Batch restoration of image files.

use std::path::{Path, PathBuf};

use log::{error, info};
use rayon::prelude::*;
use sharpgan_core::networks::Generator;
use sharpgan_core::nn::ParamStore;

use crate::error::{Error, Result};
use crate::eval::restore;
use crate::io::{is_image_path, list_images, load_image, save_png};

/// Expands directories into their sorted image files.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(list_images(p)?);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Output path for `input`: `<out_dir>/<stem>.png`.
pub fn output_path(input: &Path, out_dir: &Path) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "image".into());
    out_dir.join(stem).with_extension("png")
}

/// Restores every input into `out_dir`. A file that fails is reported and
/// skipped; the call returns [`Error::Partial`] if any did.
pub fn deblur_files(params: &ParamStore, inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let generator = Generator::from_params(params)?;
    if inputs.is_empty() {
        return Err(Error::Usage("no input images".into()));
    }
    let results: Vec<Result<PathBuf>> = inputs
        .par_iter()
        .map(|input| {
            if !is_image_path(input) {
                return Err(Error::format(input, "expected a .png, .jpg or .jpeg file"));
            }
            let img = load_image(input)?;
            let (restored, _) = restore(&generator, params, &img)?;
            let out = output_path(input, out_dir);
            save_png(&out, &restored)?;
            Ok(out)
        })
        .collect();
    let mut written = Vec::new();
    let mut failed = 0;
    for (input, r) in inputs.iter().zip(results) {
        match r {
            Ok(out) => {
                info!("{} -> {}", input.display(), out.display());
                written.push(out);
            }
            Err(e) => {
                error!("{}: {e}", input.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Error::Partial {
            failed,
            total: inputs.len(),
        });
    }
    Ok(written)
}
