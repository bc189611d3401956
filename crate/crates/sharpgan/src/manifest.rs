//! Pair manifests: one JSON object per line, entries first, then a summary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub sharp: PathBuf,
    /// Relative to the manifest's directory unless absolute.
    pub blurred: PathBuf,
    pub length_px: usize,
    pub angle_deg: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub pairs: usize,
    pub skipped: usize,
    pub total_images: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairManifest {
    pub entries: Vec<PairEntry>,
    pub skipped: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Line {
    Summary { summary: Counts },
    Entry(PairEntry),
}

impl PairManifest {
    pub fn counts(&self) -> Counts {
        Counts {
            pairs: self.entries.len(),
            skipped: self.skipped,
            total_images: 2 * self.entries.len(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entries serialize"));
            out.push('\n');
        }
        let summary = Line::Summary { summary: self.counts() };
        out.push_str(&serde_json::to_string(&summary).expect("summary serializes"));
        out.push('\n');
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            if summary.is_some() {
                return Err(Error::format(path, format!("line {}: data after the summary line", i + 1)));
            }
            match serde_json::from_str::<Line>(line) {
                Ok(Line::Entry(e)) => entries.push(e),
                Ok(Line::Summary { summary: s }) => summary = Some(s),
                Err(e) => return Err(Error::format(path, format!("line {}: {e}", i + 1))),
            }
        }
        let Some(counts) = summary else {
            return Err(Error::format(path, "missing summary line"));
        };
        let m = PairManifest {
            entries,
            skipped: counts.skipped,
        };
        if m.counts() != counts {
            return Err(Error::format(path, format!("summary {counts:?} does not match {} entries", m.entries.len())));
        }
        Ok(m)
    }

    /// Absolute `(blurred, sharp)` paths of every pair.
    pub fn resolve(&self, manifest_path: &Path) -> Vec<(PathBuf, PathBuf)> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        self.entries
            .iter()
            .map(|e| (base.join(&e.blurred), base.join(&e.sharp)))
            .collect()
    }
}
