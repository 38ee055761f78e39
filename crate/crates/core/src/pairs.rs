//! Preference pairs from scored pools and the aggregated multilingual
//! preference dataset.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::babel::{LangId, VocabLayout};
use crate::error::{Error, Result};
use crate::records;
use crate::reward::{RewardVariant, ScoredResponse};

/// Indices of the highest and lowest key. Ties on either end go to the
/// smaller id. Returns `None` when every key is equal (or the input is
/// empty).
pub fn select_extremes(keys: impl IntoIterator<Item = (f64, u32)>) -> Option<(usize, usize)> {
    let mut hi: Option<(usize, f64, u32)> = None;
    let mut lo: Option<(usize, f64, u32)> = None;
    for (i, (k, id)) in keys.into_iter().enumerate() {
        if hi.is_none_or(|(_, hk, hid)| k > hk || (k == hk && id < hid)) {
            hi = Some((i, k, id));
        }
        if lo.is_none_or(|(_, lk, lid)| k < lk || (k == lk && id < lid)) {
            lo = Some((i, k, id));
        }
    }
    match (hi, lo) {
        (Some((h, hk, _)), Some((l, lk, _))) if hk > lk => Some((h, l)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub lang: LangId,
    pub prompt_id: u64,
    pub prompt: Vec<u32>,
    pub chosen: Vec<u32>,
    pub rejected: Vec<u32>,
    pub chosen_reward: f64,
    pub rejected_reward: f64,
}

/// Highest- vs lowest-reward response of one prompt's pool. Degenerate pools
/// (all rewards equal, or identical extreme responses) yield `None`.
pub fn build_pair(prompt: &[u32], pool: &[&ScoredResponse]) -> Result<Option<PreferencePair>> {
    if pool.len() < 2 {
        return Err(Error::PoolTooSmall(pool.len()));
    }
    let Some((hi, lo)) = select_extremes(pool.iter().map(|s| (s.reward, s.sample_id))) else {
        return Ok(None);
    };
    let (c, r) = (pool[hi], pool[lo]);
    if c.tokens == r.tokens {
        return Ok(None);
    }
    Ok(Some(PreferencePair {
        lang: c.lang,
        prompt_id: c.prompt_id,
        prompt: prompt.to_vec(),
        chosen: c.tokens.clone(),
        rejected: r.tokens.clone(),
        chosen_reward: c.reward,
        rejected_reward: r.reward,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub iteration: u32,
    pub variant: Option<RewardVariant>,
    pub beta: f64,
    pub alpha: Vec<f64>,
    pub seed: u64,
    pub config_hash: String,
    pub vocab_fingerprint: String,
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance {
            iteration: 0,
            variant: None,
            beta: 0.0,
            alpha: vec![],
            seed: 0,
            config_hash: String::new(),
            vocab_fingerprint: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PreferenceDataset {
    pub pairs: Vec<PreferencePair>,
    /// Pair count per language id.
    pub counts: BTreeMap<LangId, usize>,
    /// Pools skipped as degenerate, per language id.
    pub skipped: BTreeMap<LangId, usize>,
    pub provenance: Provenance,
}

impl PreferenceDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Errors unless every pair's language exists in `vocab`.
    pub fn check_languages(&self, vocab: &VocabLayout) -> Result<()> {
        self.pairs.iter().try_for_each(|p| vocab.check_lang(p.lang))
    }
}

/// Union of per-language pairs, canonically ordered by `(lang, prompt_id)`.
pub fn aggregate(
    pairs: impl IntoIterator<Item = PreferencePair>,
    skipped: BTreeMap<LangId, usize>,
    provenance: Provenance,
) -> PreferenceDataset {
    let mut pairs: Vec<PreferencePair> = pairs.into_iter().collect();
    pairs.sort_by_key(|p| (p.lang, p.prompt_id));
    let mut counts = BTreeMap::new();
    for p in &pairs {
        *counts.entry(p.lang).or_insert(0) += 1;
    }
    PreferenceDataset {
        pairs,
        counts,
        skipped,
        provenance,
    }
}

pub const DATASET_FORMAT: &str = "xlingual-preferences";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    provenance: Provenance,
    counts: BTreeMap<LangId, usize>,
    skipped: BTreeMap<LangId, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairRecord {
    lang: LangId,
    prompt_id: u64,
    prompt_tokens: Vec<u32>,
    chosen_tokens: Vec<u32>,
    rejected_tokens: Vec<u32>,
    chosen_reward: f64,
    rejected_reward: f64,
    iteration: u32,
    variant: Option<RewardVariant>,
}

pub fn save_dataset(path: &Path, ds: &PreferenceDataset) -> Result<()> {
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        provenance: ds.provenance.clone(),
        counts: ds.counts.clone(),
        skipped: ds.skipped.clone(),
    };
    records::write_lines(
        path,
        Some(&header),
        ds.pairs.iter().map(|p| PairRecord {
            lang: p.lang,
            prompt_id: p.prompt_id,
            prompt_tokens: p.prompt.clone(),
            chosen_tokens: p.chosen.clone(),
            rejected_tokens: p.rejected.clone(),
            chosen_reward: p.chosen_reward,
            rejected_reward: p.rejected_reward,
            iteration: ds.provenance.iteration,
            variant: ds.provenance.variant,
        }),
    )
}

pub fn load_dataset(path: &Path) -> Result<PreferenceDataset> {
    let (header, recs): (DatasetHeader, Vec<PairRecord>) =
        records::read_with_header(path, DATASET_FORMAT, DATASET_VERSION)?;
    let pairs: Vec<PreferencePair> = recs
        .into_iter()
        .map(|r| PreferencePair {
            lang: r.lang,
            prompt_id: r.prompt_id,
            prompt: r.prompt_tokens,
            chosen: r.chosen_tokens,
            rejected: r.rejected_tokens,
            chosen_reward: r.chosen_reward,
            rejected_reward: r.rejected_reward,
        })
        .collect();
    let total: usize = header.counts.values().sum();
    if total != pairs.len() {
        return Err(Error::MalformedRecord {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("header counts {total} pairs, file holds {}", pairs.len()),
        });
    }
    Ok(PreferenceDataset {
        pairs,
        counts: header.counts,
        skipped: header.skipped,
        provenance: header.provenance,
    })
}
