use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{epoch_batches, run_steps, LossOutput, StepMetrics};
use crate::babel::Demonstration;
use crate::error::{Error, Result};
use crate::lm::{AdamWConfig, Model, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub peak_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            peak_lr: 3e-3,
            batch_size: 32,
            epochs: 6,
            warmup_fraction: 0.03,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Token-level cross-entropy on the response tokens of `batch`.
fn sft_loss(model: &Model, batch: &[&Demonstration]) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let tokens: usize = batch.iter().map(|d| d.response_tokens.len()).sum();
    if tokens == 0 {
        return Err(Error::InvalidConfig("demonstrations have no response tokens".into()));
    }
    let scale = 1.0 / tokens as f64;
    let mut tape = Tape::new();
    let mut nll = 0.0;
    for d in batch {
        let (id, lp) = model.forward_recorded(&mut tape, &d.prompt_tokens, &d.response_tokens)?;
        nll -= lp.total;
        tape.seed(id, -scale);
    }
    Ok(LossOutput {
        loss: nll * scale,
        grads: model.backward(&tape)?,
        components: BTreeMap::from([("nll".to_string(), nll * scale)]),
    })
}

/// Supervised fine-tuning of `model` in place.
pub fn train_sft(model: &mut Model, corpus: &[Demonstration], cfg: &SftConfig) -> Result<Vec<StepMetrics>> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig("batch_size and epochs must be at least 1".into()));
    }
    let batches = epoch_batches(corpus.len(), cfg.batch_size, cfg.epochs, cfg.seed, u64::MAX);
    run_steps(model, &batches, cfg.peak_lr, cfg.warmup_fraction, AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() }, |m, b| {
        let batch: Vec<&Demonstration> = b.iter().map(|&i| &corpus[i]).collect();
        sft_loss(m, &batch)
    })
}
