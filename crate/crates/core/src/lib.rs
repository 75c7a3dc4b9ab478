//! Patch slimming for vision transformers by one-shot life regression.
//!
//! A small bilinear module reads the backbone's features at a single
//! early layer and predicts how many layers each image patch stays
//! useful for. At inference the per-layer patch budget is fixed by a
//! schedule and the longest-lived patches are kept, so slimming costs
//! one prediction per image instead of one per slimming layer. For
//! training, the hard keep/drop decision is relaxed to a sigmoid weight
//! inside attention, which makes the predictor trainable end to end.

pub mod config;
pub mod conversion;
pub mod error;
pub mod life;
pub mod model;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use config::ViTConfig;
pub use error::{Error, Result};
pub use schedule::SlimSchedule;
pub use tensor::Tensor;
