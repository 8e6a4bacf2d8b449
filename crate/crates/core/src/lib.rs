//! Task-driven feature enhancement for underwater object detection.
//!
//! The pipeline white-balances an image, runs a shared-weight dense encoder
//! over three resolutions, fuses the scales with per-position attention and
//! adds a bounded residual back onto the input. The enhancer is trained
//! through a detection loss rather than an image-quality loss.

pub mod color;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod image;
pub mod model;
pub mod net;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use image::Image;
pub use model::{Enhancer, Model, ModelConfig};
pub use tensor::{Real, Shape, Tensor};
