//! Generator and critic definitions.

mod critic;
mod generator;
mod rfb;

pub use critic::{Critic, DiscriminatorConfig};
pub use generator::{Generator, GeneratorCache, GeneratorConfig};
pub use rfb::{RfbBlock, RfbCache, RfbsConfig};

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use crate::error::{bail, Result};
use crate::nn::{config_hash, ParamStore};

pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn stamp(store: &mut ParamStore, kind: &str, canonical: &str, seed: u64) {
    store.meta.insert("kind".into(), kind.into());
    store.meta.insert("config".into(), canonical.into());
    store.meta.insert("config_hash".into(), config_hash(canonical));
    store.meta.insert("seed".into(), seed.to_string());
    store.meta.insert("format_version".into(), FORMAT_VERSION.to_string());
}

/// Reads and verifies the `(kind, config)` stamp of a stored network.
pub(crate) fn read_stamp<'a>(store: &'a ParamStore, kind: &str) -> Result<&'a str> {
    let get = |k: &str| store.meta.get(k).map(String::as_str);
    match get("kind") {
        Some(k) if k == kind => {}
        other => bail!(Format, "expected a {kind} checkpoint, found kind {:?}", other),
    }
    let Some(cfg) = get("config") else {
        bail!(Format, "{kind} checkpoint has no config record");
    };
    let expected = config_hash(cfg);
    match get("config_hash") {
        Some(h) if h == expected => Ok(cfg),
        Some(h) => bail!(Format, "config hash mismatch: stored {h}, recomputed {expected}"),
        None => bail!(Format, "{kind} checkpoint has no config hash"),
    }
}

/// Parses `key=value,key=value` canonical config strings.
pub(crate) fn parse_kv(s: &str) -> Result<BTreeMap<&str, &str>> {
    let mut out = BTreeMap::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        let Some((k, v)) = part.split_once('=') else {
            bail!(Format, "malformed config entry `{part}`");
        };
        out.insert(k, v);
    }
    Ok(out)
}

pub(crate) fn parse_usize(map: &BTreeMap<&str, &str>, key: &str) -> Result<usize> {
    match map.get(key).map(|v| v.parse::<usize>()) {
        Some(Ok(v)) => Ok(v),
        _ => bail!(Format, "config entry `{key}` missing or not an integer"),
    }
}

pub(crate) fn parse_list(map: &BTreeMap<&str, &str>, key: &str) -> Result<alloc::vec::Vec<usize>> {
    let Some(v) = map.get(key) else {
        bail!(Format, "config entry `{key}` missing");
    };
    v.split('/')
        .map(|x| x.parse::<usize>().map_err(|_| crate::Error::Format(alloc::format!("bad list entry `{x}` in `{key}`"))))
        .collect()
}
