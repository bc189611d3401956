//! Layer kernels, layer plans and parameter containers.

mod checkpoint;
mod layers;
pub mod ops;
mod params;

pub use checkpoint::{decode_archive, encode_archive, Archive, MAGIC};
pub use layers::{Cache, Layer, Sequential};
pub use params::{config_hash, ParamStore, Params};
