//! Autoregressive response sampling with temperature and nucleus (top-p)
//! truncation.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::babel::{LangId, ParallelPrompts, VocabLayout, EOS};
use crate::error::{Error, Result};
use crate::lm::{Decoder, Model};
use crate::records;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Responses per prompt.
    pub n: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Argmax decoding; the zero-temperature limit.
    pub greedy: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n: 10,
            temperature: 0.9,
            top_p: 1.0,
            max_new_tokens: 16,
            seed: 0,
            greedy: false,
        }
    }
}

impl SamplingConfig {
    pub fn greedy(max_new_tokens: usize) -> Self {
        SamplingConfig {
            n: 1,
            greedy: true,
            max_new_tokens,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || (self.n < 2 && !self.greedy) {
            return Err(Error::InvalidConfig(format!(
                "sampling needs at least 2 responses per prompt, got {}",
                self.n
            )));
        }
        if !self.greedy && !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidConfig(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Truncated, renormalized next-token distribution as `(token, prob)` sorted
/// by descending probability (ties by ascending id). The token that crosses
/// the `top_p` mass boundary is kept.
pub fn nucleus(logits: &[f64], temperature: f64, top_p: f64) -> Vec<(u32, f64)> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let lp = crate::lm::log_softmax(&scaled);
    let mut order: Vec<(u32, f64)> = lp.iter().enumerate().map(|(i, &l)| (i as u32, l.exp())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut cum = 0.0;
    let mut keep = order.len();
    for (i, &(_, p)) in order.iter().enumerate() {
        cum += p;
        if cum >= top_p {
            keep = i + 1;
            break;
        }
    }
    order.truncate(keep);
    let mass: f64 = order.iter().map(|x| x.1).sum();
    order.iter_mut().for_each(|x| x.1 /= mass);
    order
}

fn argmax(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best as u32
}

fn check_prompt(model: &Model, prompt: &[u32], cfg: &SamplingConfig) -> Result<()> {
    if prompt.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let len = prompt.len() + cfg.max_new_tokens;
    if len > model.config().context_len {
        return Err(Error::SequenceTooLong {
            len,
            context_len: model.config().context_len,
        });
    }
    Ok(())
}

fn prime<'a>(model: &'a Model, prompt: &[u32]) -> Result<(Decoder<'a>, Vec<f64>)> {
    let mut dec = model.decoder();
    let mut logits = vec![];
    for &t in prompt {
        logits = dec.feed(t)?;
    }
    Ok((dec, logits))
}

fn continue_from(
    mut dec: Decoder<'_>,
    mut logits: Vec<f64>,
    cfg: &SamplingConfig,
    rng: &mut rng::Rng,
) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(cfg.max_new_tokens);
    while out.len() < cfg.max_new_tokens {
        let tok = if cfg.greedy {
            argmax(&logits)
        } else {
            let dist = nucleus(&logits, cfg.temperature, cfg.top_p);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = dist.last().expect("nonempty support").0;
            for &(t, p) in &dist {
                acc += p;
                if u < acc {
                    pick = t;
                    break;
                }
            }
            pick
        };
        out.push(tok);
        if tok == EOS || out.len() == cfg.max_new_tokens {
            break;
        }
        logits = dec.feed(tok)?;
    }
    Ok(out)
}

/// Draws `cfg.n` responses. Response `j` uses the sub-seed
/// `(cfg.seed, prompt_key, j)`, so any schedule gives identical output.
pub fn sample_responses(
    model: &Model,
    prompt: &[u32],
    cfg: &SamplingConfig,
    prompt_key: u64,
) -> Result<Vec<Vec<u32>>> {
    cfg.validate()?;
    check_prompt(model, prompt, cfg)?;
    let (dec, logits) = prime(model, prompt)?;
    (0..cfg.n as u64)
        .map(|j| {
            let mut r = rng::rng_for(cfg.seed, &[rng::stream::SAMPLE, prompt_key, j]);
            continue_from(dec.clone(), logits.clone(), cfg, &mut r)
        })
        .collect()
}

/// Argmax decode of one response.
pub fn greedy_decode(model: &Model, prompt: &[u32], max_new_tokens: usize) -> Result<Vec<u32>> {
    let cfg = SamplingConfig::greedy(max_new_tokens);
    check_prompt(model, prompt, &cfg)?;
    let (dec, logits) = prime(model, prompt)?;
    continue_from(dec, logits, &cfg, &mut rng::rng_for(0, &[]))
}

/// One sampled response, as persisted in pool files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledResponse {
    pub lang: LangId,
    pub prompt_id: u64,
    pub sample_id: u32,
    pub tokens: Vec<u32>,
}

pub fn prompt_key(prompt_id: u64, lang: LangId) -> u64 {
    rng::derive(prompt_id, &[lang as u64])
}

/// Samples every (prompt, language) pair of `langs`, grouped by language then
/// prompt order.
pub fn sample_pool(
    model: &Model,
    vocab: &VocabLayout,
    prompts: &ParallelPrompts,
    langs: &[LangId],
    cfg: &SamplingConfig,
) -> Result<Vec<SampledResponse>> {
    let mut pool = Vec::with_capacity(prompts.len() * langs.len() * cfg.n);
    for &lang in langs {
        vocab.check_lang(lang)?;
        for task in &prompts.tasks {
            let prompt = task.prompt(vocab, lang);
            let ys = sample_responses(model, &prompt, cfg, prompt_key(task.id, lang))?;
            pool.extend(ys.into_iter().enumerate().map(|(j, tokens)| SampledResponse {
                lang,
                prompt_id: task.id,
                sample_id: j as u32,
                tokens,
            }));
        }
    }
    Ok(pool)
}

pub fn save_pool(path: &Path, pool: &[SampledResponse]) -> Result<()> {
    records::write_lines::<(), _>(path, None, pool)
}

pub fn load_pool(path: &Path) -> Result<Vec<SampledResponse>> {
    records::read_plain(path)
}
