//! Programmatic judge for the sorting task.
//!
//! `score = clamp(correctness - verbosity - off_language, 0, 1)` where
//! correctness is the LCS of response and ideal content over `k`, verbosity is
//! `λ_v · max(0, |y| - |ideal|) / |ideal|` in tokens (EOS included), and
//! off-language is the fraction of response content tokens outside the
//! target block.

use serde::{Deserialize, Serialize};

use super::task::decode_prompt;
use super::vocab::{TokenKind, VocabLayout, EOS};
use crate::error::Result;

pub const DEFAULT_VERBOSITY_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleScore {
    pub value: f64,
    pub correctness: f64,
    pub verbosity_penalty: f64,
    pub fidelity_penalty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    A,
    B,
    Tie,
}

impl Verdict {
    pub fn flipped(self) -> Verdict {
        match self {
            Verdict::A => Verdict::B,
            Verdict::B => Verdict::A,
            Verdict::Tie => Verdict::Tie,
        }
    }
}

pub fn lcs_len(a: &[usize], b: &[usize]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    pub vocab: VocabLayout,
    pub verbosity_weight: f64,
}

impl Oracle {
    pub fn new(vocab: VocabLayout, verbosity_weight: f64) -> Self {
        Oracle {
            vocab,
            verbosity_weight,
        }
    }

    pub fn score(&self, prompt: &[u32], response: &[u32]) -> Result<OracleScore> {
        let task = decode_prompt(&self.vocab, prompt)?;
        let k = task.content.len();
        let mut ideal = task.content.clone();
        ideal.sort_unstable();

        let end = response.iter().position(|&t| t == EOS).map_or(response.len(), |i| i + 1);
        let response = &response[..end];
        let mut content = Vec::with_capacity(response.len());
        let mut off_lang = 0usize;
        for &t in response {
            if let Some(TokenKind::Content { lang, index }) = self.vocab.decode(t) {
                content.push(index);
                if lang != task.target {
                    off_lang += 1;
                }
            }
        }
        let correctness = lcs_len(&content, &ideal) as f64 / k as f64;
        let ideal_len = (k + 1) as f64;
        let extra = (response.len() as f64 - ideal_len).max(0.0);
        let verbosity_penalty = self.verbosity_weight * extra / ideal_len;
        let fidelity_penalty = if content.is_empty() {
            0.0
        } else {
            off_lang as f64 / content.len() as f64
        };
        let value = (correctness - verbosity_penalty - fidelity_penalty).clamp(0.0, 1.0);
        Ok(OracleScore {
            value,
            correctness,
            verbosity_penalty,
            fidelity_penalty,
        })
    }

    /// Head-to-head: the strictly higher score wins.
    pub fn judge(&self, prompt: &[u32], a: &[u32], b: &[u32]) -> Result<Verdict> {
        let sa = self.score(prompt, a)?.value;
        let sb = self.score(prompt, b)?.value;
        Ok(if sa > sb {
            Verdict::A
        } else if sb > sa {
            Verdict::B
        } else {
            Verdict::Tie
        })
    }
}
