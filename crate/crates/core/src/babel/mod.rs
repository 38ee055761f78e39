//! The synthetic multilingual world.
//!
//! Languages are disjoint blocks of content tokens over one shared alphabet;
//! language 0 plays English. The task is to echo the prompt's symbols in
//! ascending order, so response quality is graded rather than binary, and a
//! programmatic [`Oracle`] judges it.

mod corpus;
mod oracle;
mod task;
mod transcode;
mod vocab;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use corpus::{corrupt, gen_sft_corpus, DemoMeta, Demonstration};
pub use oracle::{lcs_len, Oracle, OracleScore, Verdict, DEFAULT_VERBOSITY_WEIGHT};
pub use task::{
    decode_prompt, gen_parallel_prompts, map_to_english, DecodedPrompt, ParallelPrompts,
    TaskInstance,
};
pub use transcode::transcode;
pub use vocab::{
    lang_name, LangId, LanguageSpec, TokenKind, VocabLayout, BOS, ENGLISH, EOS, NUM_SPECIALS, PAD,
    SEP,
};

use crate::error::Result;
use crate::records;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub num_langs: usize,
    pub alphabet: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub defect_rate: f64,
    pub crosslingual_fraction: f64,
    pub verbosity_weight: f64,
    pub train_prompts: usize,
    pub eval_prompts: usize,
    /// Demonstrations drawn per (prompt, language) for the SFT corpus.
    pub sft_copies: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            num_langs: 3,
            alphabet: 8,
            k_min: 3,
            k_max: 10,
            defect_rate: 0.5,
            crosslingual_fraction: 0.25,
            verbosity_weight: DEFAULT_VERBOSITY_WEIGHT,
            train_prompts: 1000,
            eval_prompts: 100,
            sft_copies: 2,
        }
    }
}

/// Vocabulary plus disjoint train and evaluation prompt sets.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub vocab: VocabLayout,
    pub train: ParallelPrompts,
    pub eval: ParallelPrompts,
}

pub const TASKS_FORMAT: &str = "xlingual-tasks";
pub const CORPUS_FORMAT: &str = "xlingual-corpus";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TaskRecord {
    split: Split,
    id: u64,
    content: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TasksHeader {
    format: String,
    version: u32,
    world: WorldConfig,
    vocab_fingerprint: String,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub vocab_fingerprint: String,
    pub seed: u64,
    pub records: usize,
}

impl World {
    pub fn generate(config: WorldConfig, seed: u64) -> Result<World> {
        let vocab = VocabLayout::new(config.num_langs, config.alphabet)?;
        let k = (config.k_min, config.k_max);
        let train = gen_parallel_prompts(&vocab, config.train_prompts, 0, k, seed)?;
        let eval = gen_parallel_prompts(&vocab, config.eval_prompts, config.train_prompts as u64, k, seed)?;
        Ok(World {
            config,
            vocab,
            train,
            eval,
        })
    }

    pub fn oracle(&self) -> Oracle {
        Oracle::new(self.vocab, self.config.verbosity_weight)
    }

    /// Longest prompt + response the world can produce with `max_new` response
    /// tokens, counting the mapped-prompt prefix.
    pub fn max_sequence(&self, max_new: usize) -> usize {
        self.config.k_max + 4 + max_new
    }

    pub fn sft_corpus(&self, seed: u64) -> Result<Vec<Demonstration>> {
        gen_sft_corpus(
            &self.vocab,
            &self.train,
            self.config.defect_rate,
            self.config.crosslingual_fraction,
            self.config.sft_copies,
            seed,
        )
    }

    pub fn save_tasks(&self, path: &Path, seed: u64) -> Result<()> {
        let header = TasksHeader {
            format: TASKS_FORMAT.into(),
            version: FORMAT_VERSION,
            world: self.config.clone(),
            vocab_fingerprint: self.vocab.fingerprint(),
            seed,
        };
        let rec = |split| {
            move |t: &TaskInstance| TaskRecord {
                split,
                id: t.id,
                content: t.content.clone(),
            }
        };
        let records = self
            .train
            .tasks
            .iter()
            .map(rec(Split::Train))
            .chain(self.eval.tasks.iter().map(rec(Split::Eval)));
        records::write_lines(path, Some(&header), records)
    }

    pub fn load_tasks(path: &Path) -> Result<World> {
        let (header, recs): (TasksHeader, Vec<TaskRecord>) =
            records::read_with_header(path, TASKS_FORMAT, FORMAT_VERSION)?;
        let vocab = VocabLayout::new(header.world.num_langs, header.world.alphabet)?;
        let mut train = vec![];
        let mut eval = vec![];
        for r in recs {
            let t = TaskInstance {
                id: r.id,
                content: r.content,
            };
            match r.split {
                Split::Train => train.push(t),
                Split::Eval => eval.push(t),
            }
        }
        Ok(World {
            config: header.world,
            vocab,
            train: ParallelPrompts { tasks: train },
            eval: ParallelPrompts { tasks: eval },
        })
    }
}

pub fn save_corpus(path: &Path, vocab: &VocabLayout, seed: u64, corpus: &[Demonstration]) -> Result<()> {
    let header = CorpusHeader {
        format: CORPUS_FORMAT.into(),
        version: FORMAT_VERSION,
        vocab_fingerprint: vocab.fingerprint(),
        seed,
        records: corpus.len(),
    };
    records::write_lines(path, Some(&header), corpus)
}

pub fn load_corpus(path: &Path) -> Result<(CorpusHeader, Vec<Demonstration>)> {
    records::read_with_header(path, CORPUS_FORMAT, FORMAT_VERSION)
}
