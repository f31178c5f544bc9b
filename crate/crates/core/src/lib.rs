//! Raw Bayer image restoration with a locally multiplicative window
//! transformer.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense `f64` tensors, a reverse-mode tape and a
//!   finite-difference gradient checker.
//! * [`bayer`]: RGGB raw images, packing, augmentation, synthetic noise and a
//!   small deterministic ISP.
//! * [`bfp`]: the bi-directional fusion projection from a 1×H×W mosaic to
//!   C×H/2×W/2 features.
//! * [`attention`]: window attention, 2×2 sub-window attention, their
//!   per-head product and the LeFF feed-forward.
//! * [`network`]: the U-shaped restoration network and checkpoints.
//! * [`training`]: losses, AdamW with cosine decay and the training loop.
//! * [`evaluation`]: PSNR/SSIM in raw and rendered space and the FLOPs model.

pub mod attention;
pub mod bayer;
pub mod bfp;
pub mod error;
pub mod evaluation;
pub mod kv;
pub mod network;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
