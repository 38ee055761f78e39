//! Stage orchestration over one run directory.
//!
//! Every stage writes its artifacts plus `manifest.json` into its own
//! subdirectory. A manifest records the stage hash (the stage's config
//! section chained with the hashes of the stages it consumes), so a stage
//! refuses to run on top of upstream artifacts made under a different config,
//! and re-running a finished stage with an unchanged config does nothing.

pub mod config;
pub mod studies;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use config::{
    check_relative, digest, sha256_file, EvalConfig, GradCheckConfig, ModelSpec, Overrides, PathsConfig,
    RewardAccConfig, RunConfig,
};
pub use studies::{gradcheck_suite, reward_accuracy_study, GradCheckRow, VariantAccuracy};

use crate::babel::{load_corpus, save_corpus, LangId, World};
use crate::error::{Error, Result};
use crate::eval::{
    greedy_generations, winrate_from_generations, write_json, write_text, Generations, LengthStats, WinRateReport,
};
use crate::lm::{load_checkpoint, save_checkpoint, Model};
use crate::pairs::{save_dataset, Provenance};
use crate::train::{align_en, round_dir, run_algorithm1, save_metrics, train_sft};

pub const MANIFEST_FORMAT: &str = "xlingual-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    World,
    Sft,
    Align,
    Iterate,
    Eval,
    RewardAcc,
    GradCheck,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::World,
        Stage::Sft,
        Stage::Align,
        Stage::Iterate,
        Stage::Eval,
        Stage::RewardAcc,
        Stage::GradCheck,
    ];

    /// Subcommand name.
    pub fn name(self) -> &'static str {
        match self {
            Stage::World => "gen-world",
            Stage::Sft => "train-sft",
            Stage::Align => "align-en",
            Stage::Iterate => "iterate",
            Stage::Eval => "eval",
            Stage::RewardAcc => "reward-acc",
            Stage::GradCheck => "gradcheck",
        }
    }

    /// Stages whose artifacts this one reads.
    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::World | Stage::GradCheck => &[],
            Stage::Sft => &[Stage::World],
            Stage::Align => &[Stage::Sft],
            Stage::Iterate => &[Stage::Align],
            Stage::Eval | Stage::RewardAcc => &[Stage::Align],
        }
    }

    /// Stages read when present. Eval reports on whichever iterates exist.
    pub fn optional(self) -> &'static [Stage] {
        match self {
            Stage::Eval => &[Stage::Iterate],
            _ => &[],
        }
    }

    pub fn dir(self, paths: &PathsConfig) -> &Path {
        match self {
            Stage::World => &paths.world,
            Stage::Sft => &paths.sft,
            Stage::Align => &paths.align,
            Stage::Iterate => &paths.iterate,
            Stage::Eval => &paths.eval,
            Stage::RewardAcc => &paths.reward_acc,
            Stage::GradCheck => &paths.gradcheck,
        }
    }

    fn section(self, cfg: &RunConfig) -> serde_json::Value {
        match self {
            Stage::World => json!({ "seed": cfg.seed, "world": cfg.world }),
            Stage::Sft => json!({ "model": cfg.model, "sft": cfg.sft, "init_seed": cfg.init_seed() }),
            Stage::Align => json!(cfg.align),
            Stage::Iterate => json!(cfg.iterate),
            Stage::Eval => json!(cfg.eval),
            Stage::RewardAcc => json!(cfg.reward_acc),
            Stage::GradCheck => json!({
                "world": cfg.world,
                "seed": cfg.seed,
                "model": cfg.model,
                "gradcheck": cfg.gradcheck,
                "beta": cfg.iterate.train.beta,
            }),
        }
    }

    /// The artifact whose absence a downstream stage-order error names.
    fn key_artifact(self, cfg: &RunConfig) -> PathBuf {
        let d = self.dir(&cfg.paths);
        match self {
            Stage::World => d.join("tasks.jsonl"),
            Stage::Sft | Stage::Align => d.join("model.ckpt"),
            Stage::Iterate => round_dir(d, cfg.iterate.iterations.max(1)).join("model.ckpt"),
            Stage::Eval => d.join("summary.json"),
            Stage::RewardAcc => d.join("reward_acc.csv"),
            Stage::GradCheck => d.join("report.csv"),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub stage: String,
    pub config_hash: String,
    /// Hash of the whole resolved config the stage ran under.
    pub run_config_hash: String,
    pub seed: u64,
    pub upstream: BTreeMap<String, String>,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Ran(Manifest),
    /// Already complete under the same config hash.
    UpToDate(Manifest),
}

impl Outcome {
    pub fn manifest(&self) -> &Manifest {
        match self {
            Outcome::Ran(m) | Outcome::UpToDate(m) => m,
        }
    }
}

/// Runs stages of one config against one run directory.
pub struct Runner {
    pub run_dir: PathBuf,
    pub cfg: RunConfig,
    pub force: bool,
}

impl Runner {
    pub fn new(run_dir: impl Into<PathBuf>, cfg: RunConfig, force: bool) -> Result<Self> {
        cfg.validate()?;
        Ok(Runner {
            run_dir: run_dir.into(),
            cfg,
            force,
        })
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.run_dir.join(stage.dir(&self.cfg.paths))
    }

    /// Hash `stage` would carry under the current config, given which
    /// optional upstreams are present on disk.
    pub fn stage_hash(&self, stage: Stage) -> Result<String> {
        Ok(self.hash_with(stage, &self.upstream_hashes(stage)?))
    }

    fn hash_with(&self, stage: Stage, upstream: &BTreeMap<String, String>) -> String {
        digest(&json!({
            "stage": stage.name(),
            "section": stage.section(&self.cfg),
            "upstream": upstream,
        }))
    }

    /// Expected hash of a stage when only its required inputs count.
    fn expected_hash(&self, stage: Stage) -> String {
        let upstream = stage
            .requires()
            .iter()
            .map(|&u| (u.name().to_string(), self.expected_hash(u)))
            .collect();
        self.hash_with(stage, &upstream)
    }

    fn upstream_hashes(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for &u in stage.requires() {
            out.insert(u.name().to_string(), self.check_upstream(stage, u)?);
        }
        for &u in stage.optional() {
            if self.manifest_path(u).exists() {
                out.insert(u.name().to_string(), self.check_upstream(stage, u)?);
            }
        }
        Ok(out)
    }

    /// Validates a finished upstream stage and returns its hash.
    fn check_upstream(&self, stage: Stage, upstream: Stage) -> Result<String> {
        let m = self.read_manifest(upstream)?.ok_or_else(|| Error::StageOrder {
            stage: stage.name().into(),
            missing: format!("{} ({})", upstream.name(), upstream.key_artifact(&self.cfg).display()),
        })?;
        let expected = self.expected_hash(upstream);
        if m.config_hash != expected {
            return Err(Error::ConfigHashMismatch {
                stage: upstream.name().into(),
                found: m.config_hash,
                expected,
            });
        }
        self.verify_artifacts(&m)?;
        Ok(m.config_hash)
    }

    fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join(MANIFEST_FILE)
    }

    pub fn read_manifest(&self, stage: Stage) -> Result<Option<Manifest>> {
        let p = self.manifest_path(stage);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::MalformedRecord {
            path: p.clone(),
            line: 1,
            reason: e.to_string(),
        })?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::VersionMismatch {
                path: p,
                found: format!("{} v{}", m.format, m.version),
                expected: format!("{MANIFEST_FORMAT} v{MANIFEST_VERSION}"),
            });
        }
        Ok(Some(m))
    }

    fn verify_artifacts(&self, m: &Manifest) -> Result<()> {
        for a in &m.artifacts {
            let p = self.run_dir.join(&a.path);
            if !p.exists() || sha256_file(&p)? != a.sha256 {
                return Err(Error::MissingArtifact(p));
            }
        }
        Ok(())
    }

    /// Runs `stage` unless it is already complete under the same hash.
    pub fn run(&self, stage: Stage) -> Result<Outcome> {
        let upstream = self.upstream_hashes(stage)?;
        let hash = self.hash_with(stage, &upstream);
        if !self.force {
            if let Some(m) = self.read_manifest(stage)? {
                if m.config_hash != hash {
                    return Err(Error::ConfigHashMismatch {
                        stage: stage.name().into(),
                        found: m.config_hash,
                        expected: hash,
                    });
                }
                self.verify_artifacts(&m)?;
                return Ok(Outcome::UpToDate(m));
            }
        }
        let dir = self.stage_dir(stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut files = self.execute(stage, &hash, &dir)?;
        let cfg_path = dir.join("config.toml");
        write_text(&cfg_path, &self.cfg.to_toml())?;
        files.push(cfg_path);
        let mut artifacts = Vec::new();
        for f in files {
            let rel = f
                .strip_prefix(&self.run_dir)
                .map_err(|_| Error::PathOutsideRun(f.clone()))?
                .to_path_buf();
            artifacts.push(Artifact {
                sha256: sha256_file(&f)?,
                path: rel,
            });
        }
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let m = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            stage: stage.name().into(),
            config_hash: hash,
            run_config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            upstream,
            artifacts,
        };
        write_json(&self.manifest_path(stage), &m)?;
        Ok(Outcome::Ran(m))
    }

    /// Runs every stage that feeds the standard reports, in order.
    pub fn run_all(&self) -> Result<Vec<(Stage, Outcome)>> {
        [Stage::World, Stage::Sft, Stage::Align, Stage::Iterate, Stage::Eval]
            .into_iter()
            .map(|s| self.run(s).map(|o| (s, o)))
            .collect()
    }

    pub fn load_world(&self) -> Result<World> {
        World::load_tasks(&self.stage_dir(Stage::World).join("tasks.jsonl"))
    }

    fn load_model(&self, path: PathBuf) -> Result<Model> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        load_checkpoint(&path)
    }

    pub fn load_sft(&self) -> Result<Model> {
        self.load_model(self.stage_dir(Stage::Sft).join("model.ckpt"))
    }

    pub fn load_pi0(&self) -> Result<Model> {
        self.load_model(self.stage_dir(Stage::Align).join("model.ckpt"))
    }

    /// `π^1..π^T` from a finished iterate stage, in round order.
    pub fn load_iterates(&self) -> Result<Vec<Model>> {
        let Some(m) = self.read_manifest(Stage::Iterate)? else {
            return Ok(vec![]);
        };
        let dir = self.stage_dir(Stage::Iterate);
        let rounds = m
            .artifacts
            .iter()
            .filter(|a| a.path.file_name().is_some_and(|n| n == "model.ckpt"))
            .count();
        (1..=rounds)
            .map(|t| self.load_model(round_dir(&dir, t).join("model.ckpt")))
            .collect()
    }

    fn execute(&self, stage: Stage, hash: &str, dir: &Path) -> Result<Vec<PathBuf>> {
        let cfg = &self.cfg;
        match stage {
            Stage::World => {
                let world = World::generate(cfg.world.clone(), cfg.seed)?;
                let tasks = dir.join("tasks.jsonl");
                world.save_tasks(&tasks, cfg.seed)?;
                let corpus = dir.join("sft_corpus.jsonl");
                save_corpus(&corpus, &world.vocab, cfg.seed, &world.sft_corpus(cfg.seed)?)?;
                Ok(vec![tasks, corpus])
            }
            Stage::Sft => {
                let world = self.load_world()?;
                let (_, corpus) = load_corpus(&self.stage_dir(Stage::World).join("sft_corpus.jsonl"))?;
                let mc = cfg.model.build(world.vocab.vocab_size());
                let mut model = Model::new(mc, world.vocab.fingerprint(), cfg.init_seed())?;
                let log = train_sft(&mut model, &corpus, &cfg.sft)?;
                let ckpt = dir.join("model.ckpt");
                save_checkpoint(&model, &ckpt)?;
                let log_path = dir.join("train_log.jsonl");
                save_metrics(&log_path, &log)?;
                Ok(vec![ckpt, log_path])
            }
            Stage::Align => {
                let world = self.load_world()?;
                let initial = self.load_sft()?;
                let (pi0, mut dataset, log) = align_en(&initial, &world, &cfg.align)?;
                dataset.provenance = Provenance {
                    config_hash: hash.to_string(),
                    beta: cfg.align.train.beta,
                    ..dataset.provenance
                };
                let pairs = dir.join("pairs.jsonl");
                save_dataset(&pairs, &dataset)?;
                let ckpt = dir.join("model.ckpt");
                save_checkpoint(&pi0, &ckpt)?;
                let log_path = dir.join("train_log.jsonl");
                save_metrics(&log_path, &log)?;
                Ok(vec![pairs, ckpt, log_path])
            }
            Stage::Iterate => {
                let world = self.load_world()?;
                let initial = self.load_sft()?;
                let pi0 = self.load_pi0()?;
                let state = run_algorithm1(&initial, &pi0, &world, &cfg.iterate, hash, Some(dir))?;
                let rounds = dir.join("rounds.json");
                write_json(&rounds, &state.rounds)?;
                let mut files = vec![rounds];
                for t in 1..=state.round {
                    let rd = round_dir(dir, t);
                    for f in ["pool.jsonl", "scores.jsonl", "pairs.jsonl", "train_log.jsonl", "model.ckpt"] {
                        files.push(rd.join(f));
                    }
                }
                Ok(files)
            }
            Stage::Eval => self.execute_eval(dir),
            Stage::RewardAcc => {
                let world = self.load_world()?;
                let results = reward_accuracy_study(&world, &self.load_sft()?, &self.load_pi0()?, &cfg.reward_acc, hash)?;
                let csv = dir.join("reward_acc.csv");
                write_text(&csv, &studies::reward_accuracy_csv(&results))?;
                let mut files = vec![csv];
                for r in &results {
                    let p = dir.join(format!("pairs_{}.jsonl", r.variant));
                    save_dataset(&p, &r.dataset)?;
                    files.push(p);
                    let p = dir.join(format!("lengths_{}.csv", r.variant));
                    write_text(&p, &LengthStats::from_pairs(&r.dataset.pairs).to_csv())?;
                    files.push(p);
                }
                let summary = dir.join("summary.json");
                write_json(&summary, &results)?;
                files.push(summary);
                Ok(files)
            }
            Stage::GradCheck => {
                let world = World::generate(cfg.world.clone(), cfg.seed)?;
                let rows = gradcheck_suite(&world, &cfg.model, &cfg.gradcheck, cfg.iterate.train.beta)?;
                let csv = dir.join("report.csv");
                write_text(&csv, &studies::gradcheck_csv(&rows))?;
                let json = dir.join("report.json");
                write_json(&json, &rows)?;
                let tol = cfg.gradcheck.tolerance;
                if let Some(bad) = rows.iter().find(|r| !(r.report.max_rel_error < tol)) {
                    return Err(Error::GradientMismatch {
                        what: format!("{} {}", bad.model, bad.loss),
                        worst: bad.report.max_rel_error,
                        tolerance: tol,
                    });
                }
                Ok(vec![csv, json])
            }
        }
    }

    /// Win rate of `π_I` and every iterate against the frozen `π^0`, plus
    /// length statistics of every model's generations.
    fn execute_eval(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let world = self.load_world()?;
        let oracle = world.oracle();
        let langs: Vec<LangId> = world.vocab.languages().collect();
        let training_ids: BTreeSet<u64> = world.train.tasks.iter().map(|t| t.id).collect();
        crate::eval::check_disjoint(&world.eval, &training_ids)?;
        let max_new = self.cfg.eval.max_new_tokens;
        let gen = |m: &Model| greedy_generations(m, &world.vocab, &world.eval, &langs, max_new);

        let pi0 = gen(&self.load_pi0()?)?;
        let mut candidates: Vec<(String, Generations)> = vec![("pi_I".into(), gen(&self.load_sft()?)?)];
        for (t, m) in self.load_iterates()?.iter().enumerate() {
            candidates.push((format!("pi_{}", t + 1), gen(m)?));
        }

        let mut files = Vec::new();
        let mut reports = Vec::new();
        let mut lengths = BTreeMap::from([("pi_0".to_string(), LengthStats::from_generations(&pi0))]);
        for (name, g) in &candidates {
            let report = WinRateReport {
                candidate: name.clone(),
                baseline: "pi_0".into(),
                decoding: "greedy".into(),
                max_new_tokens: max_new,
                per_lang: winrate_from_generations(g, &pi0, &world.vocab, &world.eval, &oracle)?,
            };
            let p = dir.join(format!("winrate_{name}.csv"));
            write_text(&p, &report.to_csv())?;
            files.push(p);
            lengths.insert(name.clone(), LengthStats::from_generations(g));
            reports.push(report);
        }
        let mut len_csv = String::new();
        for (i, (name, stats)) in lengths.iter().enumerate() {
            for (j, line) in stats.to_csv().lines().enumerate() {
                if j == 0 {
                    if i == 0 {
                        len_csv.push_str(&format!("model,{line}\n"));
                    }
                } else {
                    len_csv.push_str(&format!("{name},{line}\n"));
                }
            }
        }
        let p = dir.join("lengths.csv");
        write_text(&p, &len_csv)?;
        files.push(p);
        let p = dir.join("summary.json");
        write_json(&p, &json!({ "winrate": reports, "lengths": lengths }))?;
        files.push(p);
        Ok(files)
    }
}
