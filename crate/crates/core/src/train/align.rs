use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{train_iteration, StepMetrics, TrainConfig};
use crate::babel::{World, ENGLISH};
use crate::error::{Error, Result};
use crate::lm::Model;
use crate::pairs::{aggregate, PreferenceDataset, PreferencePair, Provenance};
use crate::sampler::{sample_pool, SamplingConfig};

/// English bootstrap: oracle-labelled pairs from the SFT model's own samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            sampling: SamplingConfig::default(),
            train: TrainConfig {
                loss: super::LossKind::DpoNll,
                peak_lr: 1e-4,
                epochs: 2,
                ..TrainConfig::default()
            },
        }
    }
}

/// Every oracle-ordered pair among the distinct English samples of each
/// training prompt. Prompts whose samples all score alike are skipped.
pub fn english_pairs(initial: &Model, world: &World, sampling: &SamplingConfig) -> Result<PreferenceDataset> {
    let pool = sample_pool(initial, &world.vocab, &world.train, &[ENGLISH], sampling)?;
    let oracle = world.oracle();
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for (task, samples) in world.train.tasks.iter().zip(pool.chunks(sampling.n)) {
        let prompt = task.prompt(&world.vocab, ENGLISH);
        let mut scored = samples
            .iter()
            .map(|s| Ok((oracle.score(&prompt, &s.tokens)?.value, &s.tokens)))
            .collect::<Result<Vec<_>>>()?;
        // Best first; duplicates of one sequence collapse to a single entry.
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        scored.dedup_by(|a, b| a.1 == b.1);
        let before = pairs.len();
        for (i, hi) in scored.iter().enumerate() {
            for lo in scored[i + 1..].iter().filter(|lo| lo.0 < hi.0) {
                pairs.push(PreferencePair {
                    lang: ENGLISH,
                    prompt_id: task.id,
                    prompt: prompt.clone(),
                    chosen: hi.1.clone(),
                    rejected: lo.1.clone(),
                    chosen_reward: hi.0,
                    rejected_reward: lo.0,
                });
            }
        }
        if pairs.len() == before {
            skipped += 1;
        }
    }
    let provenance = Provenance {
        seed: sampling.seed,
        vocab_fingerprint: world.vocab.fingerprint(),
        ..Provenance::default()
    };
    Ok(aggregate(pairs, BTreeMap::from([(ENGLISH, skipped)]), provenance))
}

/// Produces the English-aligned starting model from `initial`.
pub fn align_en(
    initial: &Model,
    world: &World,
    cfg: &AlignConfig,
) -> Result<(Model, PreferenceDataset, Vec<StepMetrics>)> {
    if cfg.sampling.n < 2 {
        return Err(Error::InvalidConfig("English bootstrap needs at least two samples per prompt".into()));
    }
    let dataset = english_pairs(initial, world, &cfg.sampling)?;
    let (model, log) = train_iteration(&dataset, initial, &cfg.train, 0)?;
    Ok((model, dataset, log))
}
