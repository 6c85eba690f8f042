//! Transformer encoder, losses and parameter storage.

pub mod checkpoint;
pub mod node_loss;
pub mod ops;
pub mod params;
pub mod transformer;

pub use checkpoint::{Checkpoint, ModelKind};
pub use params::{GradientSet, Layout, ModelParams, ModelShape};
pub use transformer::DropoutConfig;
