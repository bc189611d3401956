//! Synthetic blurred/sharp pair generation over a directory of images.

use std::fs;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use sharpgan_core::blur::{apply_blur, make_motion_kernel, BlurParams};

use crate::error::{Error, Result};
use crate::io::{list_images, load_image, save_png};
use crate::manifest::{PairEntry, PairManifest};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Blurs every image in `sharp_dir` into `out_dir/blurred/` and writes
/// `out_dir/manifest.jsonl`. Image `i` of the sorted listing gets the blur
/// draw `(seed, i)`, so the output does not depend on thread scheduling.
pub fn synthesize_pairs(sharp_dir: &Path, out_dir: &Path, params: &BlurParams, seed: u64) -> Result<PairManifest> {
    params.validate()?;
    if !sharp_dir.is_dir() {
        return Err(Error::Usage(format!("sharp directory {} does not exist", sharp_dir.display())));
    }
    let files = list_images(sharp_dir)?;
    let blurred_dir = out_dir.join("blurred");
    fs::create_dir_all(&blurred_dir).map_err(|e| Error::io(&blurred_dir, e))?;

    let results: Vec<Result<Option<PairEntry>>> = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let sharp = match load_image(path) {
                Ok(img) => img,
                Err(e) => {
                    warn!("skipping {e}");
                    return Ok(None);
                }
            };
            let draw = params.draw(seed, i as u64)?;
            let kernel = make_motion_kernel(draw.length_px, draw.angle_deg)?;
            let blurred = match apply_blur(&sharp, &kernel, params.noise_sigma, draw.seed) {
                Ok(img) => img,
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    return Ok(None);
                }
            };
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let rel = Path::new("blurred").join(format!("{i:05}_{stem}.png"));
            save_png(&out_dir.join(&rel), &blurred)?;
            let sharp_abs = fs::canonicalize(path).map_err(|e| Error::io(path, e))?;
            Ok(Some(PairEntry {
                sharp: sharp_abs,
                blurred: rel,
                length_px: draw.length_px,
                angle_deg: draw.angle_deg,
                seed: draw.seed,
            }))
        })
        .collect();

    let mut manifest = PairManifest {
        entries: Vec::new(),
        skipped: 0,
    };
    for r in results {
        match r? {
            Some(e) => manifest.entries.push(e),
            None => manifest.skipped += 1,
        }
    }
    manifest.write(&out_dir.join(MANIFEST_NAME))?;
    let c = manifest.counts();
    info!("{} pairs, {} images, {} skipped", c.pairs, c.total_images, c.skipped);
    Ok(manifest)
}
