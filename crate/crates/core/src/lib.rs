//! Rate-of-penetration regression with recurrent, attention and mixer
//! networks written from scratch.
//!
//! The crate covers the whole path from raw drilling logs to metrics:
//! [`data`] loads or synthesizes logs, [`preprocess`] imputes, scales and
//! windows them, [`model`] assembles the five architectures from
//! [`layers`], [`train`] fits them with AdamW, [`metrics`] scores them in
//! original units and [`explain`] attributes predictions to features.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod explain;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod preprocess;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{GradTape, Mode, Model, ModelKind, ModelSpec};
pub use params::{Gradients, ParamSet};
pub use tensor::{SeededRng, Tensor};
