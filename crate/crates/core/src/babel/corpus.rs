use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::task::{map_to_english, ParallelPrompts, TaskInstance};
use super::vocab::{LangId, VocabLayout, ENGLISH, EOS};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DemoMeta {
    pub prompt_id: u64,
    pub corrupted: bool,
    pub crosslingual: bool,
}

/// One supervised demonstration. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub lang: LangId,
    pub prompt_tokens: Vec<u32>,
    pub response_tokens: Vec<u32>,
    pub meta: DemoMeta,
}

/// Applies one or two random edits (adjacent transposition of distinct
/// symbols, or insertion of a random symbol) to a sorted content list. The
/// result always differs from the input.
pub fn corrupt(sorted: &[usize], alphabet: usize, rng: &mut Rng) -> Vec<usize> {
    loop {
        let mut out = sorted.to_vec();
        let edits = if rng.gen_bool(0.5) { 1 } else { 2 };
        for _ in 0..edits {
            let swaps: Vec<usize> = (0..out.len().saturating_sub(1))
                .filter(|&i| out[i] != out[i + 1])
                .collect();
            if !swaps.is_empty() && rng.gen_bool(0.5) {
                let i = swaps[rng.gen_range(0..swaps.len())];
                out.swap(i, i + 1);
            } else {
                let at = rng.gen_range(0..=out.len());
                out.insert(at, rng.gen_range(0..alphabet));
            }
        }
        if out != sorted {
            return out;
        }
    }
}

fn render(vocab: &VocabLayout, lang: LangId, content: &[usize]) -> Vec<u32> {
    let mut out: Vec<u32> = content.iter().map(|&c| vocab.encode(lang, c)).collect();
    out.push(EOS);
    out
}

fn demo(
    vocab: &VocabLayout,
    task: &TaskInstance,
    lang: LangId,
    defect_rate: f64,
    crosslingual_fraction: f64,
    rng: &mut Rng,
) -> Result<Demonstration> {
    let crosslingual = lang != ENGLISH && rng.gen_bool(crosslingual_fraction);
    let prompt_tokens = if crosslingual {
        map_to_english(vocab, lang, &task.prompt(vocab, ENGLISH))?
    } else {
        task.prompt(vocab, lang)
    };
    let corrupted = rng.gen_bool(defect_rate);
    let content = if corrupted {
        corrupt(&task.sorted(), vocab.alphabet(), rng)
    } else {
        task.sorted()
    };
    Ok(Demonstration {
        lang,
        prompt_tokens,
        response_tokens: render(vocab, lang, &content),
        meta: DemoMeta {
            prompt_id: task.id,
            corrupted,
            crosslingual,
        },
    })
}

/// Demonstrations for every (task, language). With probability
/// `defect_rate` a response is corrupted; with probability
/// `crosslingual_fraction` a non-English demonstration uses the mapped
/// English prompt instead of the native one. Draws for one demonstration
/// depend only on `(seed, task id, lang, copy)`.
pub fn gen_sft_corpus(
    vocab: &VocabLayout,
    prompts: &ParallelPrompts,
    defect_rate: f64,
    crosslingual_fraction: f64,
    copies: usize,
    seed: u64,
) -> Result<Vec<Demonstration>> {
    for (name, p) in [("defect_rate", defect_rate), ("crosslingual_fraction", crosslingual_fraction)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    let mut out = Vec::with_capacity(prompts.len() * vocab.num_langs() * copies);
    for task in &prompts.tasks {
        for lang in vocab.languages() {
            for copy in 0..copies {
                let mut r = rng::rng_for(seed, &[rng::stream::SFT, task.id, lang as u64, copy as u64]);
                out.push(demo(vocab, task, lang, defect_rate, crosslingual_fraction, &mut r)?);
            }
        }
    }
    Ok(out)
}
