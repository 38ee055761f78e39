//! Tiny differentiable causal language models in 64-bit floats.

mod checkpoint;
mod config;
pub(crate) mod linalg;
mod model;
mod optim;
mod params;
mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use config::{ModelConfig, ModelMode};
pub use linalg::log_softmax;
pub use model::{Decoder, LogProbResult, Model, SeqId, Tape};
pub use optim::{adamw_step, AdamWConfig, OptimizerState, Schedule};
pub use params::{GradientVector, Layout, Parameters, Segment, INIT_STD};
