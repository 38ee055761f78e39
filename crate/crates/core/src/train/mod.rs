//! Direct-alignment training: losses, the per-round trainer, supervised
//! fine-tuning, the English bootstrap and the iterative driver.

mod align;
mod gradcheck;
mod iterate;
mod loss;
mod sft;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use align::{align_en, english_pairs, AlignConfig};
pub use gradcheck::{gradcheck, GradCheckReport};
pub use iterate::{round_dir, run_algorithm1, score_and_pair, IterationConfig, IterationState, RoundMetrics, ScoredPairs};
pub use loss::{
    dpo_loss, dpo_nll_loss, estimate_zref, kto_examples, kto_loss, preference_prob, KtoExample,
    kto_loss_fixed_zref, KtoWeights, LossOutput,
};
pub use sft::{train_sft, SftConfig};

use crate::error::{Error, Result};
use crate::lm::{adamw_step, AdamWConfig, Model, OptimizerState, Schedule};
use crate::pairs::{PreferenceDataset, PreferencePair};
use crate::records;
use crate::rng;
use loss::RefLogProb;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Dpo,
    DpoNll,
    Kto,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Dpo => "dpo",
            LossKind::DpoNll => "dpo_nll",
            LossKind::Kto => "kto",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub beta: f64,
    pub peak_lr: f64,
    /// Pairs per step for pairwise losses, examples per step for KTO.
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub lambda_w: f64,
    pub lambda_l: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::DpoNll,
            beta: 0.1,
            peak_lr: 1e-4,
            batch_size: 16,
            epochs: 1,
            warmup_fraction: 0.03,
            lambda_w: 1.0,
            lambda_l: 1.0,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and epochs must be at least 1".into()));
        }
        if !(self.lambda_w >= 0.0 && self.lambda_l >= 0.0) {
            return Err(Error::InvalidConfig("KTO weights must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn kto_weights(&self) -> KtoWeights {
        KtoWeights {
            desirable: self.lambda_w,
            undesirable: self.lambda_l,
        }
    }
}

/// One optimizer step as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub loss_components: BTreeMap<String, f64>,
}

pub fn save_metrics(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    records::write_lines::<(), _>(path, None, metrics.iter())
}

pub fn load_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    records::read_plain(path)
}

/// Reference log-probabilities memoized for one round.
struct CachedReference<'a> {
    model: &'a Model,
    memo: HashMap<(Vec<u32>, Vec<u32>), f64>,
}

impl RefLogProb for CachedReference<'_> {
    fn ref_logprob(&mut self, prompt: &[u32], response: &[u32]) -> Result<f64> {
        let key = (prompt.to_vec(), response.to_vec());
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        let v = self.model.forward_logprob(prompt, response)?.total;
        self.memo.insert(key, v);
        Ok(v)
    }
}

/// Seeded permutations of `0..n`, one per epoch, concatenated and cut into
/// batches. The last batch of each epoch may be short.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, epochs: usize, seed: u64, stream_key: u64) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for e in 0..epochs {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::rng_for(seed, &[rng::stream::SHUFFLE, stream_key, e as u64]));
        out.extend(idx.chunks(batch_size).map(<[usize]>::to_vec));
    }
    out
}

pub(crate) fn run_steps(
    model: &mut Model,
    batches: &[Vec<usize>],
    peak_lr: f64,
    warmup_fraction: f64,
    hyper: AdamWConfig,
    mut loss_fn: impl FnMut(&Model, &[usize]) -> Result<LossOutput>,
) -> Result<Vec<StepMetrics>> {
    let schedule = Schedule::new(peak_lr, warmup_fraction, batches.len() as u64)?;
    let mut state = OptimizerState::new(model.params().len(), hyper, schedule);
    let mut params = model.params().clone();
    let mut log = Vec::with_capacity(batches.len());
    for batch in batches {
        let out = loss_fn(model, batch)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let step = state.step;
        let lr = adamw_step(&mut params, &out.grads, &mut state)?;
        model.params_mut().copy_from_slice(&params.0);
        log.push(StepMetrics {
            step,
            lr,
            loss: out.loss,
            loss_components: out.components,
        });
    }
    Ok(log)
}

/// Trains a copy of `start` on `dataset` with `start` itself as the loss
/// reference. `stream_key` separates the shuffles of different rounds.
pub fn train_iteration(
    dataset: &PreferenceDataset,
    start: &Model,
    cfg: &TrainConfig,
    stream_key: u64,
) -> Result<(Model, Vec<StepMetrics>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut reference = CachedReference {
        model: start,
        memo: HashMap::new(),
    };
    let mut policy = start.clone();
    let log = match cfg.loss {
        LossKind::Dpo | LossKind::DpoNll => {
            let nll = cfg.loss == LossKind::DpoNll;
            let pairs: Vec<&PreferencePair> = dataset.pairs.iter().collect();
            let batches = epoch_batches(pairs.len(), cfg.batch_size, cfg.epochs, cfg.seed, stream_key);
            run_steps(&mut policy, &batches, cfg.peak_lr, cfg.warmup_fraction, cfg.adamw(), |m, b| {
                let batch: Vec<&PreferencePair> = b.iter().map(|&i| pairs[i]).collect();
                loss::pairwise_loss(&batch, m, &mut reference, cfg.beta, nll)
            })?
        }
        LossKind::Kto => {
            let examples = kto_examples(&dataset.pairs);
            let batches = epoch_batches(examples.len(), cfg.batch_size, cfg.epochs, cfg.seed, stream_key);
            run_steps(&mut policy, &batches, cfg.peak_lr, cfg.warmup_fraction, cfg.adamw(), |m, b| {
                let batch: Vec<&KtoExample> = b.iter().map(|&i| &examples[i]).collect();
                let zref = loss::zref_with(&batch, m, &mut reference, cfg.beta)?;
                loss::kto_loss_with(&batch, m, &mut reference, cfg.beta, cfg.kto_weights(), zref)
            })?
        }
    };
    Ok((policy, log))
}
