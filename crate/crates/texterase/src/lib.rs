//! Progressive region-based scene text erasure.
//!
//! The crate trains and runs a weight-shared multi-stage eraser: each stage
//! predicts a soft text mask, reconstructs the background, and composites the
//! reconstruction into the original image *only* inside the predicted text
//! region. Everything needed around the model ships here too: the full
//! training objective (dice + region/global similarity + negative SSIM +
//! perceptual terms), a reference-based image quality suite (PSNR, MSSIM,
//! MSE, AGE, pEPs, pCEPs), a deterministic synthetic paired-data generator,
//! and a reproducible CPU training loop with checkpointing.
//!
//! Start with the runnable programs under `examples/`, or the `texterase`
//! binary (`generate`, `train`, `erase`, `eval` subcommands) for the same
//! functionality from the shell.

pub mod chart;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod graph;
pub mod image_tensor;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
pub use image_tensor::{ImageTensor, MaskKind, MaskLevel, MaskMap};
pub use model::{EraseOptions, MaskPostprocess, ModelConfig, StageOutput, TextEraser};
