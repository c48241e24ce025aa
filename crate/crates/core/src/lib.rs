//! Temporally distributed video semantic segmentation at desk scale.
//!
//! Shallow convolutional sub-networks are assigned circularly to video frames;
//! per-frame features are recomposed with a downsampled attention-propagation
//! module, and training distills from a deep single-frame teacher through a
//! grouped loss. Everything runs on a small reverse-mode autodiff engine with
//! exact multiply-accumulate accounting in place of wall-clock timing.

pub mod apm;
pub mod ckpt;
pub mod data;
pub mod distill;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod init;
pub mod metrics;
pub mod optim;
pub mod scheduler;
pub mod subnet;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, TensorId};
pub use tensor::Tensor;
