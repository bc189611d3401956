//! Binary named-tensor archive.
//!
//! ```text
//! magic      8 bytes  "SGANCKPT"
//! version    u32 LE   (currently 1)
//! header_len u64 LE
//! header     UTF-8, one record per line, tab separated:
//!              meta   <key> <value>
//!              tensor <name> f64 <d0>x<d1>x… <offset> <nbytes>
//! payload    raw little-endian f64 data; offsets are relative to the
//!            payload start and tensors are stored back to back
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::params::ParamStore;
use crate::error::{bail, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SGANCKPT";
const VERSION: u32 = 1;

/// A decoded archive is a parameter map with its metadata.
pub type Archive = ParamStore;

fn check_field(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.contains(['\t', '\n', '\r']) {
        bail!(Format, "{kind} `{s}` must be non-empty and free of tabs and newlines");
    }
    Ok(())
}

pub fn encode_archive(store: &ParamStore) -> Result<Vec<u8>> {
    let mut header = String::new();
    for (k, v) in &store.meta {
        check_field("metadata key", k)?;
        check_field("metadata value", v)?;
        header.push_str(&format!("meta\t{k}\t{v}\n"));
    }
    let mut offset = 0usize;
    for (name, t) in store.iter() {
        check_field("tensor name", name)?;
        let shape = if t.shape().is_empty() {
            String::from("-")
        } else {
            t.shape().iter().map(|d| format!("{d}")).collect::<Vec<_>>().join("x")
        };
        let nbytes = t.len() * 8;
        header.push_str(&format!("tensor\t{name}\tf64\t{shape}\t{offset}\t{nbytes}\n"));
        offset += nbytes;
    }
    let mut out = Vec::with_capacity(20 + header.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (_, t) in store.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_archive(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < 20 {
        bail!(Format, "file too short ({} bytes) to hold a checkpoint preamble", bytes.len());
    }
    if &bytes[..8] != MAGIC {
        bail!(Format, "bad magic bytes; not a sharpgan checkpoint");
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        bail!(Format, "unsupported format version {version} (expected {VERSION})");
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let Some(header) = bytes.get(20..20usize.saturating_add(hlen)) else {
        bail!(Format, "header length {hlen} exceeds file size {}", bytes.len());
    };
    let Ok(header) = core::str::from_utf8(header) else {
        bail!(Format, "header is not valid UTF-8");
    };
    let payload = &bytes[20 + hlen..];
    let mut store = ParamStore::new();
    let mut expected_offset = 0usize;
    for (lineno, line) in header.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            ["meta", k, v] => {
                store.meta.insert((*k).into(), (*v).into());
            }
            ["tensor", name, dtype, shape, offset, nbytes] => {
                if *dtype != "f64" {
                    bail!(Format, "header line {}: unsupported dtype `{dtype}`", lineno + 1);
                }
                let shape: Vec<usize> = if *shape == "-" {
                    Vec::new()
                } else {
                    shape
                        .split('x')
                        .map(|d| d.parse().map_err(|_| crate::Error::Format(format!("header line {}: bad shape", lineno + 1))))
                        .collect::<Result<_>>()?
                };
                let (Ok(offset), Ok(nbytes)) = (offset.parse::<usize>(), nbytes.parse::<usize>()) else {
                    bail!(Format, "header line {}: bad offset or length", lineno + 1);
                };
                let count: usize = shape.iter().product();
                if nbytes != count * 8 || offset != expected_offset {
                    bail!(Format, "header line {}: tensor `{name}` layout is inconsistent", lineno + 1);
                }
                let Some(raw) = payload.get(offset..offset + nbytes) else {
                    bail!(Format, "tensor `{name}` runs past the end of the payload (truncated file?)");
                };
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                store.insert(name, Tensor::from_vec(&shape, data)?)?;
                expected_offset += nbytes;
            }
            _ => bail!(Format, "header line {}: unrecognized record", lineno + 1),
        }
    }
    if expected_offset != payload.len() {
        bail!(Format, "payload holds {} bytes but the header describes {expected_offset}", payload.len());
    }
    Ok(store)
}
