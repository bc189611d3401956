//! Numerical core of the sharpgan motion-deblurring toolkit.
//!
//! Everything here is `no_std` + `alloc`: synthetic motion blur, the
//! RFB-s generator and patch critic with hand-written backward passes,
//! the adversarial/perceptual/pixel loss suite, Adam, the training step and
//! PSNR/SSIM. File formats and the command line live in the `sharpgan`
//! crate.
#![no_std]
extern crate alloc;

pub mod blur;
mod error;
pub mod features;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
