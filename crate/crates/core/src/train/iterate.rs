use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{save_metrics, train_iteration, TrainConfig};
use crate::babel::{LangId, ParallelPrompts, VocabLayout, World};
use crate::error::{Error, Result};
use crate::lm::{save_checkpoint, Model};
use crate::pairs::{aggregate, build_pair, save_dataset, PreferenceDataset, PreferencePair, Provenance};
use crate::reward::{
    alpha_grid, apply_alpha, group_pools, optimize_alpha, save_scores, score_pool, RewardConfig,
    ScoredResponse, ScoringModels,
};
use crate::rng;
use crate::sampler::{sample_pool, save_pool, SampledResponse, SamplingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterationConfig {
    pub iterations: usize,
    pub sampling: SamplingConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            iterations: 2,
            sampling: SamplingConfig::default(),
            reward: RewardConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub alpha: Vec<f64>,
    pub pool_size: usize,
    pub pairs: BTreeMap<LangId, usize>,
    pub skipped: BTreeMap<LangId, usize>,
    pub mean_chosen_len: f64,
    pub mean_rejected_len: f64,
    pub first_loss: f64,
    pub last_loss: f64,
    /// Relative to the output directory, when one was given.
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

/// Models and per-round records so far. `models[t]` is `π^t`.
#[derive(Debug, Clone)]
pub struct IterationState {
    pub round: usize,
    pub models: Vec<Model>,
    pub datasets: Vec<PreferenceDataset>,
    pub rounds: Vec<RoundMetrics>,
}

impl IterationState {
    pub fn current(&self) -> &Model {
        self.models.last().expect("state holds π^0")
    }
}

/// A scored pool and the extreme pairs drawn from it.
#[derive(Debug, Clone)]
pub struct ScoredPairs {
    pub responses: Vec<ScoredResponse>,
    pub pairs: Vec<PreferencePair>,
    /// Pools per language that produced no pair.
    pub skipped: BTreeMap<LangId, usize>,
}

/// Scores `pool`, fits the length penalty when `reward.optimize_alpha` is set
/// (writing the fitted values back into `reward.alpha`), and keeps the
/// highest- and lowest-reward response of every (language, prompt) pool.
pub fn score_and_pair(
    models: ScoringModels<'_>,
    vocab: &VocabLayout,
    prompts: &ParallelPrompts,
    pool: &[SampledResponse],
    reward: &mut RewardConfig,
) -> Result<ScoredPairs> {
    let mut responses = score_pool(models, vocab, prompts, pool, reward)?;
    if reward.optimize_alpha {
        reward.alpha = optimize_alpha(&responses, vocab.num_langs(), &alpha_grid())?;
        apply_alpha(&mut responses, &reward.alpha);
    }
    let tasks: BTreeMap<u64, _> = prompts.tasks.iter().map(|task| (task.id, task)).collect();
    let mut pairs = Vec::new();
    let mut skipped: BTreeMap<LangId, usize> = BTreeMap::new();
    for ((lang, prompt_id), group) in group_pools(&responses) {
        let prompt = tasks[&prompt_id].prompt(vocab, lang);
        match build_pair(&prompt, &group)? {
            Some(p) => pairs.push(p),
            None => *skipped.entry(lang).or_insert(0) += 1,
        }
    }
    Ok(ScoredPairs {
        responses,
        pairs,
        skipped,
    })
}

/// Paths of the artifacts of round `t` under `dir`.
pub fn round_dir(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("round{t}"))
}

/// Runs rounds `1..=cfg.iterations`: sample with `π^{t−1}`, score, pair,
/// and train `π^t` from `π^{t−1}`. With `out`, each round's pool, scores,
/// dataset, step log and checkpoint are written before the next round starts.
pub fn run_algorithm1(
    initial: &Model,
    pi0: &Model,
    world: &World,
    cfg: &IterationConfig,
    config_hash: &str,
    out: Option<&Path>,
) -> Result<IterationState> {
    initial.check_same_vocab(pi0)?;
    cfg.reward.validate()?;
    cfg.train.validate()?;
    cfg.sampling.validate()?;
    let mut state = IterationState {
        round: 0,
        models: vec![pi0.clone()],
        datasets: vec![],
        rounds: vec![],
    };
    let langs: Vec<LangId> = (0..world.vocab.num_langs()).collect();
    for t in 1..=cfg.iterations {
        let policy = &state.models[t - 1];
        let sampling = SamplingConfig {
            seed: rng::derive(cfg.sampling.seed, &[rng::stream::ROUND, t as u64]),
            ..cfg.sampling.clone()
        };
        let pool = sample_pool(policy, &world.vocab, &world.train, &langs, &sampling)?;

        let mut reward = cfg.reward.clone();
        reward.seed = rng::derive(cfg.reward.seed, &[rng::stream::ROUND, t as u64]);
        let models = ScoringModels {
            policy,
            initial,
            previous: if t >= 2 { Some(&state.models[t - 2]) } else { None },
        };
        let scored = score_and_pair(models, &world.vocab, &world.train, &pool, &mut reward)?;
        let provenance = Provenance {
            iteration: t as u32,
            variant: Some(reward.variant),
            beta: reward.beta,
            alpha: reward.alpha.clone(),
            seed: cfg.train.seed,
            config_hash: config_hash.to_string(),
            vocab_fingerprint: world.vocab.fingerprint(),
        };
        let dataset = aggregate(scored.pairs, scored.skipped, provenance);
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (next, log) = train_iteration(&dataset, policy, &cfg.train, t as u64)?;

        let n = dataset.len() as f64;
        let mut metrics = RoundMetrics {
            round: t,
            alpha: reward.alpha.clone(),
            pool_size: pool.len(),
            pairs: dataset.counts.clone(),
            skipped: dataset.skipped.clone(),
            mean_chosen_len: dataset.pairs.iter().map(|p| p.chosen.len() as f64).sum::<f64>() / n,
            mean_rejected_len: dataset.pairs.iter().map(|p| p.rejected.len() as f64).sum::<f64>() / n,
            first_loss: log.first().map_or(f64::NAN, |s| s.loss),
            last_loss: log.last().map_or(f64::NAN, |s| s.loss),
            checkpoint: None,
            dataset: None,
        };
        if let Some(dir) = out {
            let rd = round_dir(dir, t);
            std::fs::create_dir_all(&rd).map_err(|e| Error::io(&rd, e))?;
            save_pool(&rd.join("pool.jsonl"), &pool)?;
            save_scores(&rd.join("scores.jsonl"), &scored.responses, &reward)?;
            save_dataset(&rd.join("pairs.jsonl"), &dataset)?;
            save_metrics(&rd.join("train_log.jsonl"), &log)?;
            let ckpt = rd.join("model.ckpt");
            save_checkpoint(&next, &ckpt)?;
            let rel = round_dir(Path::new(""), t);
            metrics.checkpoint = Some(rel.join("model.ckpt"));
            metrics.dataset = Some(rel.join("pairs.jsonl"));
        }
        state.models.push(next);
        state.datasets.push(dataset);
        state.rounds.push(metrics);
        state.round = t;
    }
    Ok(state)
}
