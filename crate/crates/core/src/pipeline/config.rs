use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::babel::{VocabLayout, WorldConfig};
use crate::error::{Error, Result};
use crate::lm::{ModelConfig, ModelMode};
use crate::reward::{RewardVariant, ReferencePolicy};
use crate::rng;
use crate::sampler::SamplingConfig;
use crate::train::{AlignConfig, IterationConfig, LossKind, SftConfig};

/// Architecture minus the vocabulary size, which the world determines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub mode: ModelMode,
    pub context_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let c = ModelConfig::desk_transformer(0);
        ModelSpec {
            mode: c.mode,
            context_len: c.context_len,
            d_model: c.d_model,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            mlp_ratio: c.mlp_ratio,
        }
    }
}

impl ModelSpec {
    pub fn build(&self, vocab_size: usize) -> ModelConfig {
        match self.mode {
            ModelMode::Bigram => ModelConfig::bigram(vocab_size, self.context_len),
            ModelMode::Transformer => ModelConfig {
                mode: self.mode,
                vocab_size,
                context_len: self.context_len,
                d_model: self.d_model,
                n_layers: self.n_layers,
                n_heads: self.n_heads,
                mlp_ratio: self.mlp_ratio,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub max_new_tokens: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { max_new_tokens: 16 }
    }
}

/// Reward accuracy of pairs drawn from `π^0` samples, per reward variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardAccConfig {
    /// Leading training prompts to sample; 0 means all.
    pub prompts: usize,
    pub sampling: SamplingConfig,
    pub beta: f64,
    pub optimize_alpha: bool,
    pub variants: Vec<RewardVariant>,
    /// Corruption rate of the translator used by `rt`.
    pub translate_noise: f64,
    pub seed: u64,
}

impl Default for RewardAccConfig {
    fn default() -> Self {
        RewardAccConfig {
            prompts: 300,
            sampling: SamplingConfig::default(),
            beta: 0.1,
            optimize_alpha: true,
            variants: vec![RewardVariant::Rc, RewardVariant::Rm, RewardVariant::Rt],
            translate_noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub probes: usize,
    pub eps: f64,
    /// Preference pairs in the probed batch.
    pub pairs: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            probes: 200,
            eps: 1e-5,
            pairs: 4,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// Stage output directories, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub world: PathBuf,
    pub sft: PathBuf,
    pub align: PathBuf,
    pub iterate: PathBuf,
    pub eval: PathBuf,
    pub reward_acc: PathBuf,
    pub gradcheck: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            world: "world".into(),
            sft: "sft".into(),
            align: "align".into(),
            iterate: "iterate".into(),
            eval: "eval".into(),
            reward_acc: "reward-acc".into(),
            gradcheck: "gradcheck".into(),
        }
    }
}

impl PathsConfig {
    fn all(&self) -> [&Path; 7] {
        [
            &self.world,
            &self.sft,
            &self.align,
            &self.iterate,
            &self.eval,
            &self.reward_acc,
            &self.gradcheck,
        ]
    }
}

/// One file configures every stage. Seed fields inside sections are
/// overwritten by values derived from the top-level `seed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub model: ModelSpec,
    pub sft: SftConfig,
    pub align: AlignConfig,
    pub iterate: IterationConfig,
    pub eval: EvalConfig,
    pub reward_acc: RewardAccConfig,
    pub gradcheck: GradCheckConfig,
    pub paths: PathsConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub reward: Option<RewardVariant>,
    pub loss: Option<LossKind>,
    pub reference: Option<ReferencePolicy>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Defaults, then `file`, then `overrides`; seeds derived last.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.iterations {
            self.iterate.iterations = t;
        }
        if let Some(v) = o.reward {
            self.iterate.reward.variant = v;
        }
        if let Some(l) = o.loss {
            self.iterate.train.loss = l;
        }
        if let Some(r) = o.reference {
            self.iterate.reward.reference = r;
        }
    }

    pub fn derive_seeds(&mut self) {
        let s = self.seed;
        // TOML integers are signed, so derived seeds keep 63 bits.
        let d = |stage: u64, part: u64| rng::derive(s, &[stage, part]) >> 1;
        self.sft.seed = d(rng::stream::SFT, 0);
        self.align.sampling.seed = d(rng::stream::SAMPLE, 0);
        self.align.train.seed = d(rng::stream::SHUFFLE, 0);
        self.iterate.sampling.seed = d(rng::stream::SAMPLE, 1);
        self.iterate.reward.seed = d(rng::stream::TRANSLATE, 1);
        self.iterate.train.seed = d(rng::stream::SHUFFLE, 1);
        self.reward_acc.sampling.seed = d(rng::stream::SAMPLE, 2);
        self.reward_acc.seed = d(rng::stream::TRANSLATE, 2);
        self.gradcheck.seed = d(rng::stream::GRADCHECK, 0);
    }

    /// Seed of the freshly initialised model that SFT starts from.
    pub fn init_seed(&self) -> u64 {
        rng::derive(self.seed, &[rng::stream::INIT])
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::InvalidConfig(format!("seed must be at most {}", i64::MAX)));
        }
        for p in self.paths.all() {
            check_relative(p)?;
        }
        self.align.train.validate()?;
        self.align.sampling.validate()?;
        self.iterate.train.validate()?;
        self.iterate.sampling.validate()?;
        self.iterate.reward.validate()?;
        self.reward_acc.sampling.validate()?;
        if self.reward_acc.sampling.n < 2 {
            return Err(Error::InvalidConfig("reward_acc.sampling.n must be at least 2".into()));
        }
        if self.gradcheck.probes == 0 || self.gradcheck.pairs == 0 || !(self.gradcheck.eps > 0.0) {
            return Err(Error::InvalidConfig("gradcheck needs probes > 0, pairs > 0 and eps > 0".into()));
        }
        if self.eval.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("eval.max_new_tokens must be positive".into()));
        }
        let vocab = VocabLayout::new(self.world.num_langs, self.world.alphabet)?;
        self.model.build(vocab.vocab_size()).validate()
    }

    /// Hash of the whole resolved config.
    pub fn hash(&self) -> String {
        digest(&serde_json::to_value(self).expect("config serializes"))
    }
}

/// Rejects absolute paths and paths that climb out of the run directory.
pub fn check_relative(p: &Path) -> Result<()> {
    let ok = !p.as_os_str().is_empty()
        && p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if ok {
        Ok(())
    } else {
        Err(Error::PathOutsideRun(p.to_path_buf()))
    }
}

/// Hex sha256 of the canonical JSON encoding of `value`.
pub fn digest(value: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = RunConfig::from_toml("seed = 7\n[iterate]\niterations = 3\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.iterate.iterations, 3);
        assert_eq!(partial.world, WorldConfig::default());
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn flags_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 3\n[iterate.reward]\nvariant = \"rm\"\n").unwrap();
        let from_file = RunConfig::resolve(Some(&p), &Overrides::default()).unwrap();
        assert_eq!(from_file.seed, 3);
        assert_eq!(from_file.iterate.reward.variant, RewardVariant::Rm);
        let o = Overrides {
            seed: Some(5),
            reward: Some(RewardVariant::Rt),
            ..Default::default()
        };
        let flagged = RunConfig::resolve(Some(&p), &o).unwrap();
        assert_eq!(flagged.seed, 5);
        assert_eq!(flagged.iterate.reward.variant, RewardVariant::Rt);
        assert_ne!(flagged.sft.seed, from_file.sft.seed);
        assert_ne!(flagged.hash(), from_file.hash());
    }

    #[test]
    fn paths_must_stay_inside_run_dir() {
        assert!(check_relative(Path::new("world")).is_ok());
        assert!(check_relative(Path::new("a/./b")).is_ok());
        for bad in ["/tmp/x", "../x", "a/../../x", ""] {
            assert!(matches!(check_relative(Path::new(bad)), Err(Error::PathOutsideRun(_))), "{bad}");
        }
        let mut cfg = RunConfig::default();
        cfg.paths.sft = "../elsewhere".into();
        assert!(matches!(cfg.validate(), Err(Error::PathOutsideRun(_))));
    }
}
