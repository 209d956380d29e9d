//! CPU inference, complexity analysis, and detection-quality evaluation for a
//! lightweight metallic-surface defect detector.
//!
//! The network pairs a shuffle-unit backbone (channel split + channel shuffle,
//! depth-wise 3x3 convolutions) with a three-scale FPN/PAN neck and anchor-box
//! heads. Everything runs on dense `f32` NCHW tensors with deterministic
//! arithmetic: the same weights and input produce bit-identical outputs
//! regardless of thread count.

pub mod cli;
pub mod demo;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod model;
pub mod ops;
pub mod oracle;
pub mod postprocess;
pub mod render;
pub mod tensor;

pub use error::{Error, Result};
