use super::config::{ModelConfig, ModelMode};
use super::linalg::{log_softmax, softmax_inplace};
use super::params::{transformer_offsets, GradientVector, Layout, Parameters, TransformerOffsets};
use super::transformer::{self, KvCache, TransformerCache};
use crate::error::{Error, Result};

/// Log-probabilities of a response given its prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbResult {
    /// `log π(y_i | x, y_<i)` for each response token.
    pub per_token: Vec<f64>,
    pub total: f64,
    pub token_count: usize,
}

/// A differentiable autoregressive language model: configuration plus
/// parameters. Plays the policy, reference and initial-model roles.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    offsets: Option<TransformerOffsets>,
    params: Parameters,
    vocab_fingerprint: String,
    seed: u64,
}

/// Handle to one recorded sequence on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqId(usize);

enum SeqCache {
    Bigram,
    Transformer(TransformerCache),
}

struct TapeEntry {
    tokens: Vec<u32>,
    prompt_len: usize,
    cache: SeqCache,
    /// Softmax over the vocabulary for each response position.
    probs: Vec<f64>,
    /// `∂loss/∂(total log-prob of this sequence)`.
    coeff: f64,
}

/// Records forward passes so that a loss expressed in terms of sequence
/// log-probabilities can be differentiated.
///
/// Every loss in this crate is a scalar function of per-sequence totals
/// `log π(y|x)`; callers compute `∂loss/∂total` analytically, [`Tape::seed`]
/// it on each sequence, then call [`Model::backward`].
#[derive(Default)]
pub struct Tape {
    entries: Vec<TapeEntry>,
    param_len: Option<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accumulates `coeff` into the sequence's upstream gradient.
    pub fn seed(&mut self, id: SeqId, coeff: f64) {
        self.entries[id.0].coeff += coeff;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Model {
    /// Fresh seeded model.
    pub fn new(config: ModelConfig, vocab_fingerprint: impl Into<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::for_config(&config);
        let params = Parameters::init(&layout, seed);
        Self::assemble(config, layout, params, vocab_fingerprint.into(), seed)
    }

    pub fn from_parameters(
        config: ModelConfig,
        params: Parameters,
        vocab_fingerprint: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::for_config(&config);
        Self::assemble(config, layout, params, vocab_fingerprint.into(), seed)
    }

    fn assemble(
        config: ModelConfig,
        layout: Layout,
        params: Parameters,
        vocab_fingerprint: String,
        seed: u64,
    ) -> Result<Self> {
        params.check(&layout)?;
        let offsets = match config.mode {
            ModelMode::Transformer => Some(transformer_offsets(&config)),
            ModelMode::Bigram => None,
        };
        Ok(Model {
            config,
            layout,
            offsets,
            params,
            vocab_fingerprint,
            seed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set_params(&mut self, params: Parameters) -> Result<()> {
        params.check(&self.layout)?;
        self.params = params;
        Ok(())
    }

    /// Direct access for optimizers and finite-difference probes. Callers
    /// must keep every entry finite.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params.0
    }

    /// Errors with [`Error::VocabularyMismatch`] unless both models read the
    /// same token space.
    pub fn check_same_vocab(&self, other: &Model) -> Result<()> {
        if self.config.vocab_size != other.config.vocab_size
            || self.vocab_fingerprint != other.vocab_fingerprint
        {
            return Err(Error::VocabularyMismatch(
                format!("{}/{}", self.vocab_fingerprint, self.config.vocab_size),
                format!("{}/{}", other.vocab_fingerprint, other.config.vocab_size),
            ));
        }
        Ok(())
    }

    fn validate(&self, prompt: &[u32], response: &[u32]) -> Result<()> {
        if prompt.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let len = prompt.len() + response.len();
        if len > self.config.context_len {
            return Err(Error::SequenceTooLong {
                len,
                context_len: self.config.context_len,
            });
        }
        let vocab = self.config.vocab_size;
        if let Some(&token) = prompt.iter().chain(response).find(|&&t| t as usize >= vocab) {
            return Err(Error::TokenOutOfRange {
                token,
                vocab_size: vocab,
            });
        }
        Ok(())
    }

    fn run(&self, prompt: &[u32], response: &[u32]) -> (TapeEntry, LogProbResult) {
        let tokens: Vec<u32> = prompt.iter().chain(response).copied().collect();
        let p = prompt.len();
        let r = response.len();
        let v = self.config.vocab_size;
        let rows = p - 1..p - 1 + r;
        let (cache, logits) = match self.config.mode {
            ModelMode::Bigram => {
                let mut logits = vec![0.0; r * v];
                for (i, row) in rows.clone().enumerate() {
                    let a = tokens[row] as usize;
                    logits[i * v..(i + 1) * v].copy_from_slice(&self.params.0[a * v..(a + 1) * v]);
                }
                (SeqCache::Bigram, logits)
            }
            ModelMode::Transformer => {
                let offs = self.offsets.as_ref().expect("transformer offsets");
                let (cache, logits) =
                    transformer::forward(&self.config, offs, &self.params.0, &tokens, rows);
                (SeqCache::Transformer(cache), logits)
            }
        };
        let mut per_token = Vec::with_capacity(r);
        let mut probs = logits;
        for (i, &y) in response.iter().enumerate() {
            let row = &mut probs[i * v..(i + 1) * v];
            let lp = log_softmax(row);
            per_token.push(lp[y as usize]);
            softmax_inplace(row);
        }
        let total = per_token.iter().sum();
        let entry = TapeEntry {
            tokens,
            prompt_len: p,
            cache,
            probs,
            coeff: 0.0,
        };
        (
            entry,
            LogProbResult {
                per_token,
                total,
                token_count: r,
            },
        )
    }

    /// `log π(response | prompt)`; prompt positions only condition.
    pub fn forward_logprob(&self, prompt: &[u32], response: &[u32]) -> Result<LogProbResult> {
        self.validate(prompt, response)?;
        Ok(self.run(prompt, response).1)
    }

    /// As [`Model::forward_logprob`], recording the pass on `tape`.
    pub fn forward_recorded(
        &self,
        tape: &mut Tape,
        prompt: &[u32],
        response: &[u32],
    ) -> Result<(SeqId, LogProbResult)> {
        self.validate(prompt, response)?;
        if let Some(len) = tape.param_len {
            if len != self.params.len() {
                return Err(Error::ShapeMismatch {
                    expected: len,
                    actual: self.params.len(),
                });
            }
        }
        tape.param_len = Some(self.params.len());
        let (entry, result) = self.run(prompt, response);
        tape.entries.push(entry);
        Ok((SeqId(tape.entries.len() - 1), result))
    }

    /// Exact reverse-mode gradient of the loss seeded on `tape`. Entries are
    /// reduced in recording order.
    pub fn backward(&self, tape: &Tape) -> Result<GradientVector> {
        if tape.entries.is_empty() {
            return Err(Error::NoRecordedForward);
        }
        if tape.param_len != Some(self.params.len()) {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                actual: tape.param_len.unwrap_or(0),
            });
        }
        let v = self.config.vocab_size;
        let mut grad = GradientVector::zeros(self.params.len());
        for entry in &tape.entries {
            if entry.coeff == 0.0 {
                continue;
            }
            let p = entry.prompt_len;
            let r = entry.tokens.len() - p;
            if r == 0 {
                continue;
            }
            // d total / d logits = onehot(y) - softmax
            let mut dlogits: Vec<f64> = entry.probs.iter().map(|q| -entry.coeff * q).collect();
            for i in 0..r {
                let y = entry.tokens[p + i] as usize;
                dlogits[i * v + y] += entry.coeff;
            }
            match &entry.cache {
                SeqCache::Bigram => {
                    for i in 0..r {
                        let a = entry.tokens[p - 1 + i] as usize;
                        grad.0[a * v..(a + 1) * v]
                            .iter_mut()
                            .zip(&dlogits[i * v..(i + 1) * v])
                            .for_each(|(g, d)| *g += d);
                    }
                }
                SeqCache::Transformer(cache) => {
                    let offs = self.offsets.as_ref().expect("transformer offsets");
                    transformer::backward(
                        &self.config,
                        offs,
                        &self.params.0,
                        cache,
                        p - 1..p - 1 + r,
                        &dlogits,
                        &mut grad.0,
                    );
                }
            }
        }
        if grad.0.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        Ok(grad)
    }

    /// Next-token log-distribution after `context`, via a full forward pass.
    pub fn next_token_logprobs(&self, context: &[u32]) -> Result<Vec<f64>> {
        self.validate(context, &[])?;
        let logits = match self.config.mode {
            ModelMode::Bigram => {
                let a = *context.last().expect("nonempty") as usize;
                let v = self.config.vocab_size;
                self.params.0[a * v..(a + 1) * v].to_vec()
            }
            ModelMode::Transformer => {
                let offs = self.offsets.as_ref().expect("transformer offsets");
                let n = context.len();
                transformer::forward(&self.config, offs, &self.params.0, context, n - 1..n).1
            }
        };
        Ok(log_softmax(&logits))
    }

    /// Incremental decoder for sampling.
    pub fn decoder(&self) -> Decoder<'_> {
        let state = match self.config.mode {
            ModelMode::Bigram => DecodeState::Bigram { pos: 0 },
            ModelMode::Transformer => DecodeState::Transformer(KvCache::new(self.config.n_layers)),
        };
        Decoder { model: self, state }
    }
}

#[derive(Clone)]
enum DecodeState {
    Bigram { pos: usize },
    Transformer(KvCache),
}

/// Feeds tokens one at a time, returning next-token logits after each.
#[derive(Clone)]
pub struct Decoder<'a> {
    model: &'a Model,
    state: DecodeState,
}

impl Decoder<'_> {
    pub fn position(&self) -> usize {
        match &self.state {
            DecodeState::Bigram { pos } => *pos,
            DecodeState::Transformer(kv) => kv.pos,
        }
    }

    pub fn feed(&mut self, token: u32) -> Result<Vec<f64>> {
        let cfg = &self.model.config;
        if token as usize >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange {
                token,
                vocab_size: cfg.vocab_size,
            });
        }
        if self.position() >= cfg.context_len {
            return Err(Error::SequenceTooLong {
                len: self.position() + 1,
                context_len: cfg.context_len,
            });
        }
        let m = self.model;
        Ok(match &mut self.state {
            DecodeState::Bigram { pos } => {
                *pos += 1;
                let v = cfg.vocab_size;
                let a = token as usize;
                m.params.0[a * v..(a + 1) * v].to_vec()
            }
            DecodeState::Transformer(kv) => {
                let offs = m.offsets.as_ref().expect("transformer offsets");
                transformer::decode_step(cfg, offs, &m.params.0, kv, token)
            }
        })
    }
}
