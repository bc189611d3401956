//! Checkpoint files on disk.

use std::fs;
use std::path::Path;

use sharpgan_core::nn::{decode_archive, encode_archive, ParamStore};
use sharpgan_core::train::TrainState;

use crate::error::{in_file, Error, Result};
use crate::io::write_atomic;

pub fn read_store(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    in_file(path, decode_archive(&bytes))
}

pub fn write_store(path: &Path, store: &ParamStore) -> Result<()> {
    write_atomic(path, &encode_archive(store)?)
}

pub fn read_train_state(path: &Path) -> Result<TrainState> {
    let store = read_store(path)?;
    in_file(path, TrainState::from_archive(&store))
}

pub fn write_train_state(path: &Path, state: &TrainState) -> Result<()> {
    write_store(path, &state.to_archive()?)
}

/// Generator weights from either a generator export or a full training
/// state.
pub fn read_generator(path: &Path) -> Result<ParamStore> {
    let store = read_store(path)?;
    match store.meta.get("kind").map(String::as_str) {
        Some("train_state") => Ok(in_file(path, TrainState::from_archive(&store))?.generator),
        Some("generator") => Ok(store),
        other => Err(Error::format(path, format!("expected generator weights, found kind {other:?}"))),
    }
}
