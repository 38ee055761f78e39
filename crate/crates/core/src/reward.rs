//! Implicit rewards and their cross-lingual, multilingual and
//! translate-to-English variants.
//!
//! All variants share `β · log[π_θ(y'|x') / π_ref(y'|x')] − α[ℓ]·|y|` and
//! differ only in the conditioning prompt `x'` and scored response `y'`:
//!
//! | variant | `x'`                         | `y'`                      |
//! |---------|------------------------------|---------------------------|
//! | `Rc`    | prefix(ℓ) ++ English prompt  | `y`                       |
//! | `Rm`    | native prompt in ℓ           | `y`                       |
//! | `Rt`    | English prompt               | `y` transcoded to English |
//!
//! `|y|` is the untranslated response length in tokens.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::babel::{map_to_english, transcode, LangId, ParallelPrompts, TaskInstance, VocabLayout, ENGLISH};
use crate::error::{Error, Result};
use crate::lm::Model;
use crate::pairs::select_extremes;
use crate::records;
use crate::rng;
use crate::sampler::SampledResponse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardVariant {
    Rc,
    Rm,
    Rt,
}

impl std::fmt::Display for RewardVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RewardVariant::Rc => "rc",
            RewardVariant::Rm => "rm",
            RewardVariant::Rt => "rt",
        })
    }
}

/// Which model plays the reference when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferencePolicy {
    /// The SFT model `π_I`, fixed across rounds.
    Initial,
    /// The model the scoring policy was trained from.
    Previous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub variant: RewardVariant,
    pub beta: f64,
    /// Per-language length penalty in reward units per token. Missing
    /// entries count as zero. Overwritten each round when `optimize_alpha`.
    pub alpha: Vec<f64>,
    pub optimize_alpha: bool,
    pub reference: ReferencePolicy,
    /// Per-token distortion of the `Rt` translation.
    pub translate_noise: f64,
    pub seed: u64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            variant: RewardVariant::Rc,
            beta: 0.1,
            alpha: vec![],
            optimize_alpha: true,
            reference: ReferencePolicy::Initial,
            translate_noise: 0.0,
            seed: 0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if self.alpha.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::InvalidConfig("alpha entries must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.translate_noise) {
            return Err(Error::InvalidConfig("translate_noise must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn alpha_for(&self, lang: LangId) -> f64 {
        self.alpha.get(lang).copied().unwrap_or(0.0)
    }
}

/// `β · (log π_θ(y|x) − log π_ref(y|x))` with raw summed log-probabilities.
pub fn implicit_reward(policy: &Model, reference: &Model, x: &[u32], y: &[u32], beta: f64) -> Result<f64> {
    policy.check_same_vocab(reference)?;
    let lp = policy.forward_logprob(x, y)?.total;
    let lr = reference.forward_logprob(x, y)?.total;
    Ok(beta * (lp - lr))
}

/// Everything a reward needs about one response.
#[derive(Debug, Clone, Copy)]
pub struct RewardInput<'a> {
    pub lang: LangId,
    pub prompt_id: u64,
    pub sample_id: u32,
    /// The native prompt `x^ℓ`.
    pub prompt: &'a [u32],
    /// Its parallel English rendering `x^en`.
    pub prompt_en: &'a [u32],
    pub response: &'a [u32],
}

/// Conditioning prompt and scored response for `variant`.
pub fn reward_view(
    vocab: &VocabLayout,
    variant: RewardVariant,
    input: &RewardInput<'_>,
    cfg: &RewardConfig,
) -> Result<(Vec<u32>, Vec<u32>)> {
    vocab.check_lang(input.lang)?;
    Ok(match variant {
        RewardVariant::Rc => (map_to_english(vocab, input.lang, input.prompt_en)?, input.response.to_vec()),
        RewardVariant::Rm => (input.prompt.to_vec(), input.response.to_vec()),
        RewardVariant::Rt => {
            let y = if input.lang == ENGLISH {
                input.response.to_vec()
            } else {
                let mut r = rng::rng_for(
                    cfg.seed,
                    &[rng::stream::TRANSLATE, input.prompt_id, input.lang as u64, input.sample_id as u64],
                );
                transcode(vocab, input.response, input.lang, ENGLISH, cfg.translate_noise, &mut r)
            };
            (input.prompt_en.to_vec(), y)
        }
    })
}

fn variant_reward(
    policy: &Model,
    reference: &Model,
    vocab: &VocabLayout,
    variant: RewardVariant,
    input: &RewardInput<'_>,
    cfg: &RewardConfig,
) -> Result<f64> {
    let (x, y) = reward_view(vocab, variant, input, cfg)?;
    let raw = implicit_reward(policy, reference, &x, &y, cfg.beta)?;
    Ok(raw - cfg.alpha_for(input.lang) * input.response.len() as f64)
}

/// Cross-lingual reward: the instruction is mapped to English first.
pub fn reward_rc(policy: &Model, reference: &Model, vocab: &VocabLayout, input: &RewardInput<'_>, cfg: &RewardConfig) -> Result<f64> {
    variant_reward(policy, reference, vocab, RewardVariant::Rc, input, cfg)
}

/// Multilingual reward: conditioned directly on the native instruction.
pub fn reward_rm(policy: &Model, reference: &Model, vocab: &VocabLayout, input: &RewardInput<'_>, cfg: &RewardConfig) -> Result<f64> {
    variant_reward(policy, reference, vocab, RewardVariant::Rm, input, cfg)
}

/// Translate-to-English reward: the response is transcoded to English and
/// scored against the English instruction.
pub fn reward_rt(policy: &Model, reference: &Model, vocab: &VocabLayout, input: &RewardInput<'_>, cfg: &RewardConfig) -> Result<f64> {
    variant_reward(policy, reference, vocab, RewardVariant::Rt, input, cfg)
}

/// A response with its reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub lang: LangId,
    pub prompt_id: u64,
    pub sample_id: u32,
    pub tokens: Vec<u32>,
    /// Log-ratio term alone (`α = 0`).
    pub raw: f64,
    /// `raw − α[ℓ]·token_count`.
    pub reward: f64,
    pub token_count: usize,
}

/// The models a scoring pass can draw on.
#[derive(Debug, Clone, Copy)]
pub struct ScoringModels<'a> {
    pub policy: &'a Model,
    pub initial: &'a Model,
    /// The model `policy` was trained from; `None` means `initial`.
    pub previous: Option<&'a Model>,
}

impl<'a> ScoringModels<'a> {
    pub fn reference(&self, policy: ReferencePolicy) -> &'a Model {
        match policy {
            ReferencePolicy::Initial => self.initial,
            ReferencePolicy::Previous => self.previous.unwrap_or(self.initial),
        }
    }
}

fn task_index(prompts: &ParallelPrompts) -> HashMap<u64, &TaskInstance> {
    prompts.tasks.iter().map(|t| (t.id, t)).collect()
}

/// Scores every response in `pool` with `cfg.variant` and the current
/// `cfg.alpha`. Output order follows the pool.
pub fn score_pool(
    models: ScoringModels<'_>,
    vocab: &VocabLayout,
    prompts: &ParallelPrompts,
    pool: &[SampledResponse],
    cfg: &RewardConfig,
) -> Result<Vec<ScoredResponse>> {
    cfg.validate()?;
    let reference = models.reference(cfg.reference);
    models.policy.check_same_vocab(reference)?;
    let tasks = task_index(prompts);
    let mut memo: HashMap<(Vec<u32>, Vec<u32>), f64> = HashMap::new();
    let mut out = Vec::with_capacity(pool.len());
    for s in pool {
        let task = tasks
            .get(&s.prompt_id)
            .ok_or_else(|| Error::EmptyPool(format!("prompt {} is not in the prompt set", s.prompt_id)))?;
        let prompt = task.prompt(vocab, s.lang);
        let prompt_en = task.prompt(vocab, ENGLISH);
        let input = RewardInput {
            lang: s.lang,
            prompt_id: s.prompt_id,
            sample_id: s.sample_id,
            prompt: &prompt,
            prompt_en: &prompt_en,
            response: &s.tokens,
        };
        let key = reward_view(vocab, cfg.variant, &input, cfg)?;
        let raw = match memo.get(&key) {
            Some(&r) => r,
            None => {
                let r = implicit_reward(models.policy, reference, &key.0, &key.1, cfg.beta)?;
                memo.insert(key, r);
                r
            }
        };
        let len = s.tokens.len();
        out.push(ScoredResponse {
            lang: s.lang,
            prompt_id: s.prompt_id,
            sample_id: s.sample_id,
            tokens: s.tokens.clone(),
            raw,
            reward: raw - cfg.alpha_for(s.lang) * len as f64,
            token_count: len,
        });
    }
    Ok(out)
}

/// Recomputes `reward` from `raw` under per-language `alpha`.
pub fn apply_alpha(scored: &mut [ScoredResponse], alpha: &[f64]) {
    for s in scored {
        let a = alpha.get(s.lang).copied().unwrap_or(0.0);
        s.reward = s.raw - a * s.token_count as f64;
    }
}

/// Groups responses by `(lang, prompt_id)` in key order.
pub fn group_pools(scored: &[ScoredResponse]) -> BTreeMap<(LangId, u64), Vec<&ScoredResponse>> {
    let mut groups: BTreeMap<(LangId, u64), Vec<&ScoredResponse>> = BTreeMap::new();
    for s in scored {
        groups.entry((s.lang, s.prompt_id)).or_default().push(s);
    }
    groups
}

/// `{0} ∪` 40 log-spaced points in `[1e-4, 1]`.
pub fn alpha_grid() -> Vec<f64> {
    let n = 40;
    let (lo, hi) = (1e-4f64.ln(), 1.0f64.ln());
    std::iter::once(0.0)
        .chain((0..n).map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()))
        .collect()
}

/// Mean `|y⁺| − |y⁻|` over pools when ranking by `raw − α·|y|`. Pools whose
/// adjusted scores are all equal form no pair and are left out; with no pairs
/// the gap is zero.
pub fn mean_length_gap(pools: &[Vec<&ScoredResponse>], alpha: f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for pool in pools {
        let keyed = pool
            .iter()
            .map(|s| (s.raw - alpha * s.token_count as f64, s.sample_id));
        if let Some((hi, lo)) = select_extremes(keyed) {
            total += pool[hi].token_count as f64 - pool[lo].token_count as f64;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Per-language `α̂ = argmin_α |mean length gap|` over `grid`, ties toward
/// the smaller `α`. Languages without pools get zero.
pub fn optimize_alpha(scored: &[ScoredResponse], num_langs: usize, grid: &[f64]) -> Result<Vec<f64>> {
    let groups = group_pools(scored);
    let mut alpha = vec![0.0; num_langs];
    for (lang, slot) in alpha.iter_mut().enumerate() {
        let pools: Vec<Vec<&ScoredResponse>> = groups
            .iter()
            .filter(|((l, _), _)| *l == lang)
            .map(|(_, v)| v.clone())
            .collect();
        if pools.is_empty() {
            continue;
        }
        if let Some(p) = pools.iter().find(|p| p.len() < 2) {
            return Err(Error::EmptyPool(format!(
                "prompt {} in language {lang} has {} scored responses",
                p.first().map_or(0, |s| s.prompt_id),
                p.len()
            )));
        }
        let mut best = (f64::INFINITY, 0.0);
        for &a in grid {
            let gap = mean_length_gap(&pools, a).abs();
            if gap < best.0 {
                best = (gap, a);
            }
        }
        *slot = best.1;
    }
    Ok(alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub lang: LangId,
    pub prompt_id: u64,
    pub sample_id: u32,
    pub reward: f64,
    pub length: usize,
    pub variant: RewardVariant,
    pub beta: f64,
    pub alpha: f64,
}

pub fn save_scores(path: &Path, scored: &[ScoredResponse], cfg: &RewardConfig) -> Result<()> {
    records::write_lines::<(), _>(
        path,
        None,
        scored.iter().map(|s| ScoreRecord {
            lang: s.lang,
            prompt_id: s.prompt_id,
            sample_id: s.sample_id,
            reward: s.reward,
            length: s.token_count,
            variant: cfg.variant,
            beta: cfg.beta,
            alpha: cfg.alpha_for(s.lang),
        }),
    )
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    records::read_plain(path)
}
