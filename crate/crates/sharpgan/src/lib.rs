//! File formats, the training loop and the `sharpgan` command line on top
//! of `sharpgan-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod deblur;
pub mod error;
pub mod eval;
pub mod io;
pub mod manifest;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use sharpgan_core as core;
