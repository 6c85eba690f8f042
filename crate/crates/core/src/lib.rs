//! Graph sequence pretraining: random-walk contexts, masked feature
//! reconstruction with a from-scratch Transformer, in-context few-shot node
//! classification and link prediction.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod icl;
pub mod linkpred;
pub mod nn;
pub mod optim;
pub mod partition;
pub mod pretrain;
pub mod rng;
pub mod scalar;
pub mod sequence;
pub mod synth;
pub mod walk;

pub use error::{GsptError, Result};
