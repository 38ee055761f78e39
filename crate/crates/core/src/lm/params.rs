//! Flat parameter storage and its named-segment layout.
//!
//! Transformer layout, in order (`d` = d_model, `h` = d_model·mlp_ratio,
//! `V` = vocab_size, `C` = context_len; matrices are row-major `[in, out]`):
//!
//! | segment            | shape      |
//! |--------------------|------------|
//! | `wte`              | `[V, d]`   |
//! | `wpe`              | `[C, d]`   |
//! | per layer `i`:     |            |
//! | `h{i}.ln1.g/.b`    | `[d]`      |
//! | `h{i}.attn.wqkv`   | `[d, 3d]`  |
//! | `h{i}.attn.bqkv`   | `[3d]`     |
//! | `h{i}.attn.wo`     | `[d, d]`   |
//! | `h{i}.attn.bo`     | `[d]`      |
//! | `h{i}.ln2.g/.b`    | `[d]`      |
//! | `h{i}.mlp.w1`      | `[d, h]`   |
//! | `h{i}.mlp.b1`      | `[h]`      |
//! | `h{i}.mlp.w2`      | `[h, d]`   |
//! | `h{i}.mlp.b2`      | `[d]`      |
//! | `lnf.g/.b`         | `[d]`      |
//! | `wout`             | `[d, V]`   |
//! | `bout`             | `[V]`      |
//!
//! The bigram layout is a single `table` segment of shape `[V, V]`; row `a`
//! holds the next-token logits after token `a`.

use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, ModelMode};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one transformer block inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wqkv: usize,
    pub bqkv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct TransformerOffsets {
    pub wte: usize,
    pub wpe: usize,
    pub blocks: Vec<BlockOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub wout: usize,
    pub bout: usize,
}

#[derive(Debug, Clone)]
pub struct Layout {
    segments: Vec<Segment>,
    total: usize,
}

struct Builder {
    segments: Vec<Segment>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let offset = self.total;
        self.segments.push(Segment {
            name,
            offset,
            rows,
            cols,
            init,
        });
        self.total += rows * cols;
        offset
    }
}

impl Layout {
    pub fn for_config(cfg: &ModelConfig) -> Self {
        let (segments, total) = match cfg.mode {
            ModelMode::Bigram => {
                let mut b = Builder {
                    segments: vec![],
                    total: 0,
                };
                b.push("table".into(), cfg.vocab_size, cfg.vocab_size, Init::Normal);
                (b.segments, b.total)
            }
            ModelMode::Transformer => {
                let (b, _) = build_transformer(cfg);
                (b.segments, b.total)
            }
        };
        Layout { segments, total }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Name of the segment that owns flat index `idx`.
    pub fn locate(&self, idx: usize) -> Option<(&Segment, usize)> {
        self.segments
            .iter()
            .find(|s| s.range().contains(&idx))
            .map(|s| (s, idx - s.offset))
    }
}

fn build_transformer(cfg: &ModelConfig) -> (Builder, TransformerOffsets) {
    let d = cfg.d_model;
    let h = cfg.hidden_dim();
    let v = cfg.vocab_size;
    let mut b = Builder {
        segments: vec![],
        total: 0,
    };
    let wte = b.push("wte".into(), v, d, Init::Normal);
    let wpe = b.push("wpe".into(), cfg.context_len, d, Init::Normal);
    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        let p = |s: &str| format!("h{i}.{s}");
        blocks.push(BlockOffsets {
            ln1_g: b.push(p("ln1.g"), 1, d, Init::Ones),
            ln1_b: b.push(p("ln1.b"), 1, d, Init::Zeros),
            wqkv: b.push(p("attn.wqkv"), d, 3 * d, Init::Normal),
            bqkv: b.push(p("attn.bqkv"), 1, 3 * d, Init::Zeros),
            wo: b.push(p("attn.wo"), d, d, Init::Normal),
            bo: b.push(p("attn.bo"), 1, d, Init::Zeros),
            ln2_g: b.push(p("ln2.g"), 1, d, Init::Ones),
            ln2_b: b.push(p("ln2.b"), 1, d, Init::Zeros),
            w1: b.push(p("mlp.w1"), d, h, Init::Normal),
            b1: b.push(p("mlp.b1"), 1, h, Init::Zeros),
            w2: b.push(p("mlp.w2"), h, d, Init::Normal),
            b2: b.push(p("mlp.b2"), 1, d, Init::Zeros),
        });
    }
    let lnf_g = b.push("lnf.g".into(), 1, d, Init::Ones);
    let lnf_b = b.push("lnf.b".into(), 1, d, Init::Zeros);
    let wout = b.push("wout".into(), d, v, Init::Normal);
    let bout = b.push("bout".into(), 1, v, Init::Zeros);
    let offsets = TransformerOffsets {
        wte,
        wpe,
        blocks,
        lnf_g,
        lnf_b,
        wout,
        bout,
    };
    (b, offsets)
}

pub(crate) fn transformer_offsets(cfg: &ModelConfig) -> TransformerOffsets {
    build_transformer(cfg).1
}

/// Flat parameter vector `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters(pub Vec<f64>);

/// `∂loss/∂θ`, same layout as [`Parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

/// Standard deviation of the Gaussian used for weight matrices.
pub const INIT_STD: f64 = 0.02;

impl Parameters {
    /// Seeded initialization: `N(0, 0.02)` weights, zero biases and norm
    /// offsets, unit norm gains.
    pub fn init(layout: &Layout, seed: u64) -> Self {
        let mut rng = rng::rng_for(seed, &[rng::stream::INIT]);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut data = vec![0.0; layout.len()];
        for seg in layout.segments() {
            let slot = &mut data[seg.range()];
            match seg.init {
                Init::Normal => slot.iter_mut().for_each(|x| *x = normal.sample(&mut rng)),
                Init::Zeros => {}
                Init::Ones => slot.fill(1.0),
            }
        }
        Parameters(data)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check(&self, layout: &Layout) -> Result<()> {
        if self.0.len() != layout.len() {
            return Err(Error::ShapeMismatch {
                expected: layout.len(),
                actual: self.0.len(),
            });
        }
        if self.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(())
    }
}

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        GradientVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}
