use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::vocab::{LangId, TokenKind, VocabLayout, BOS, ENGLISH, EOS, SEP};
use crate::error::{Error, Result};
use crate::rng;

/// One sorting task: the prompt lists content symbols, the ideal answer
/// lists them in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: u64,
    pub content: Vec<usize>,
}

impl TaskInstance {
    pub fn k(&self) -> usize {
        self.content.len()
    }

    pub fn sorted(&self) -> Vec<usize> {
        let mut s = self.content.clone();
        s.sort_unstable();
        s
    }

    /// `BOS tag(ℓ) content(ℓ) SEP`
    pub fn prompt(&self, vocab: &VocabLayout, lang: LangId) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.k() + 3);
        out.push(BOS);
        out.push(vocab.tag(lang));
        out.extend(self.content.iter().map(|&c| vocab.encode(lang, c)));
        out.push(SEP);
        out
    }

    /// Sorted content rendered in `lang`, terminated by EOS.
    pub fn ideal_response(&self, vocab: &VocabLayout, lang: LangId) -> Vec<u32> {
        let mut out: Vec<u32> = self.sorted().into_iter().map(|c| vocab.encode(lang, c)).collect();
        out.push(EOS);
        out
    }
}

/// Maps an instruction in `lang` onto its English counterpart: English is
/// returned unchanged, otherwise the language prefix is prepended to the
/// parallel English prompt.
pub fn map_to_english(vocab: &VocabLayout, lang: LangId, prompt_en: &[u32]) -> Result<Vec<u32>> {
    let spec = vocab.language(lang)?;
    if lang == ENGLISH {
        return Ok(prompt_en.to_vec());
    }
    let mut out = spec.prefix_tokens;
    out.extend_from_slice(prompt_en);
    Ok(out)
}

/// What a prompt asks for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedPrompt {
    /// Language the answer must be written in.
    pub target: LangId,
    pub content: Vec<usize>,
}

/// Accepts `BOS tag content.. SEP`, optionally preceded by prefix tags (the
/// mapped cross-lingual form). The first prefix tag, if any, names the target
/// language.
pub fn decode_prompt(vocab: &VocabLayout, prompt: &[u32]) -> Result<DecodedPrompt> {
    let bad = |why: &str| Error::UndecodablePrompt(format!("{why} in {prompt:?}"));
    let bos = prompt.iter().position(|&t| t == BOS).ok_or_else(|| bad("no BOS"))?;
    let mut prefix_lang = None;
    for &t in &prompt[..bos] {
        match vocab.decode(t) {
            Some(TokenKind::Tag(l)) => {
                prefix_lang.get_or_insert(l);
            }
            _ => return Err(bad("non-tag token before BOS")),
        }
    }
    let rest = &prompt[bos + 1..];
    let (&tag, rest) = rest.split_first().ok_or_else(|| bad("missing tag"))?;
    let body_lang = match vocab.decode(tag) {
        Some(TokenKind::Tag(l)) => l,
        _ => return Err(bad("missing tag")),
    };
    let (&last, body) = rest.split_last().ok_or_else(|| bad("missing SEP"))?;
    if last != SEP {
        return Err(bad("missing SEP"));
    }
    let content = body
        .iter()
        .map(|&t| match vocab.decode(t) {
            Some(TokenKind::Content { index, .. }) => Ok(index),
            _ => Err(bad("non-content token in body")),
        })
        .collect::<Result<Vec<_>>>()?;
    if content.is_empty() {
        return Err(bad("empty body"));
    }
    Ok(DecodedPrompt {
        target: prefix_lang.unwrap_or(body_lang),
        content,
    })
}

/// Parallel prompt set: each task is rendered in every language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPrompts {
    pub tasks: Vec<TaskInstance>,
}

impl ParallelPrompts {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn prompt(&self, vocab: &VocabLayout, index: usize, lang: LangId) -> Vec<u32> {
        self.tasks[index].prompt(vocab, lang)
    }
}

/// `n` seeded tasks with ids `first_id..first_id + n`; lengths are uniform in
/// `k_range`. Each task depends only on `(seed, id)`.
pub fn gen_parallel_prompts(
    vocab: &VocabLayout,
    n: usize,
    first_id: u64,
    k_range: (usize, usize),
    seed: u64,
) -> Result<ParallelPrompts> {
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one prompt".into()));
    }
    let (k_min, k_max) = k_range;
    if k_min == 0 || k_min > k_max {
        return Err(Error::InvalidConfig(format!("bad task length range {k_min}..={k_max}")));
    }
    let tasks = (0..n as u64)
        .map(|i| {
            let id = first_id + i;
            let mut r = rng::rng_for(seed, &[rng::stream::WORLD, id]);
            let k = r.gen_range(k_min..=k_max);
            let content = (0..k).map(|_| r.gen_range(0..vocab.alphabet())).collect();
            TaskInstance { id, content }
        })
        .collect();
    Ok(ParallelPrompts { tasks })
}
