//! Implicit cross-lingual rewarding for multilingual preference alignment,
//! reproduced on a synthetic multilingual world small enough to verify
//! end to end.
//!
//! Pipeline: an SFT model (`π_I`) is DPO-aligned on English, the aligned
//! model's implicit reward scores responses in the other languages, and the
//! resulting preference pairs drive iterative DPO+NLL (or KTO) rounds.

pub mod error;
pub mod lm;
pub mod rng;

pub use error::{Error, Result};
pub mod babel;
pub mod records;
pub mod sampler;
pub mod pairs;
pub mod reward;
pub mod train;
pub mod eval;
pub mod pipeline;
