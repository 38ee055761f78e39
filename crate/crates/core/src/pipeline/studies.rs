//! Measurements that run on top of trained checkpoints: reward accuracy per
//! reward variant, and the finite-difference check of every loss.

use serde::Serialize;

use super::config::{GradCheckConfig, ModelSpec, RewardAccConfig};
use crate::babel::{LangId, ParallelPrompts, VocabLayout, World};
use crate::error::Result;
use crate::eval::{reward_accuracy, RewardAccuracyReport};
use crate::lm::{Model, ModelConfig};
use crate::pairs::{aggregate, PreferenceDataset, PreferencePair, Provenance};
use crate::reward::{ReferencePolicy, RewardConfig, RewardVariant, ScoringModels};
use crate::rng;
use crate::sampler::sample_pool;
use crate::train::{
    dpo_loss, dpo_nll_loss, estimate_zref, gradcheck, kto_examples, kto_loss_fixed_zref, score_and_pair,
    GradCheckReport, KtoWeights, LossKind,
};

#[derive(Debug, Clone, Serialize)]
pub struct VariantAccuracy {
    pub variant: RewardVariant,
    pub translate_noise: f64,
    pub alpha: Vec<f64>,
    pub report: RewardAccuracyReport,
    #[serde(skip)]
    pub dataset: PreferenceDataset,
}

/// The first `n` prompts, or all of them when `n` is 0 or too large.
pub fn leading(prompts: &ParallelPrompts, n: usize) -> ParallelPrompts {
    let n = if n == 0 { prompts.len() } else { n.min(prompts.len()) };
    ParallelPrompts {
        tasks: prompts.tasks[..n].to_vec(),
    }
}

/// Samples one pool from `pi0`, scores it under each configured reward
/// variant against `initial`, and grades the resulting extreme pairs with the
/// oracle.
pub fn reward_accuracy_study(
    world: &World,
    initial: &Model,
    pi0: &Model,
    cfg: &RewardAccConfig,
    config_hash: &str,
) -> Result<Vec<VariantAccuracy>> {
    initial.check_same_vocab(pi0)?;
    let prompts = leading(&world.train, cfg.prompts);
    let langs: Vec<LangId> = world.vocab.languages().collect();
    let pool = sample_pool(pi0, &world.vocab, &prompts, &langs, &cfg.sampling)?;
    let oracle = world.oracle();
    let mut out = Vec::new();
    for &variant in &cfg.variants {
        let translate_noise = if variant == RewardVariant::Rt { cfg.translate_noise } else { 0.0 };
        let mut reward = RewardConfig {
            variant,
            beta: cfg.beta,
            alpha: vec![],
            optimize_alpha: cfg.optimize_alpha,
            reference: ReferencePolicy::Initial,
            translate_noise,
            seed: cfg.seed,
        };
        reward.validate()?;
        let models = ScoringModels {
            policy: pi0,
            initial,
            previous: None,
        };
        let scored = score_and_pair(models, &world.vocab, &prompts, &pool, &mut reward)?;
        let report = reward_accuracy(&scored.pairs, &oracle)?;
        let provenance = Provenance {
            iteration: 0,
            variant: Some(variant),
            beta: reward.beta,
            alpha: reward.alpha.clone(),
            seed: cfg.seed,
            config_hash: config_hash.to_string(),
            vocab_fingerprint: world.vocab.fingerprint(),
        };
        out.push(VariantAccuracy {
            variant,
            translate_noise,
            alpha: reward.alpha,
            report,
            dataset: aggregate(scored.pairs, scored.skipped, provenance),
        });
    }
    Ok(out)
}

pub fn reward_accuracy_csv(results: &[VariantAccuracy]) -> String {
    let mut s = String::from("variant,translate_noise,metric,lang,correct,incorrect,ties,value\n");
    for r in results {
        for line in r.report.to_csv().lines().skip(1) {
            s.push_str(&format!("{},{},{line}\n", r.variant, r.translate_noise));
        }
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckRow {
    pub model: String,
    pub loss: LossKind,
    pub report: GradCheckReport,
}

/// Pairs of (ideal, ideal minus its first token) over the leading prompts,
/// cycling through languages.
pub fn probe_pairs(vocab: &VocabLayout, prompts: &ParallelPrompts, n: usize) -> Vec<PreferencePair> {
    prompts
        .tasks
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, task)| {
            let lang = i % vocab.num_langs();
            let chosen = task.ideal_response(vocab, lang);
            PreferencePair {
                lang,
                prompt_id: task.id,
                prompt: task.prompt(vocab, lang),
                rejected: chosen[1..].to_vec(),
                chosen,
                chosen_reward: 1.0,
                rejected_reward: 0.0,
            }
        })
        .collect()
}

/// Analytic vs central-difference gradients of every loss, on a freshly
/// initialised transformer and bigram model each scored against a second,
/// differently seeded reference.
pub fn gradcheck_suite(world: &World, spec: &ModelSpec, cfg: &GradCheckConfig, beta: f64) -> Result<Vec<GradCheckRow>> {
    let vocab_size = world.vocab.vocab_size();
    let fp = world.vocab.fingerprint();
    let transformer = ModelSpec {
        mode: crate::lm::ModelMode::Transformer,
        ..spec.clone()
    };
    let archs = [
        ("transformer", transformer.build(vocab_size)),
        ("bigram", ModelConfig::bigram(vocab_size, spec.context_len)),
    ];
    let pairs = probe_pairs(&world.vocab, &world.train, cfg.pairs);
    let batch: Vec<&PreferencePair> = pairs.iter().collect();
    let examples = kto_examples(batch.iter().copied());
    let kto_batch: Vec<_> = examples.iter().collect();
    let mut rows = Vec::new();
    for (a, (name, mc)) in archs.into_iter().enumerate() {
        let policy = Model::new(mc.clone(), fp.clone(), rng::derive(cfg.seed, &[rng::stream::INIT, a as u64, 0]))?;
        let reference = Model::new(mc, fp.clone(), rng::derive(cfg.seed, &[rng::stream::INIT, a as u64, 1]))?;
        // z_ref is held constant inside the loss, so it is fixed at the base point.
        let zref = estimate_zref(&kto_batch, &policy, &reference, beta)?;
        for loss in [LossKind::Dpo, LossKind::DpoNll, LossKind::Kto] {
            let report = gradcheck(&policy, cfg.probes, cfg.eps, cfg.seed, |m| match loss {
                LossKind::Dpo => dpo_loss(&batch, m, &reference, beta),
                LossKind::DpoNll => dpo_nll_loss(&batch, m, &reference, beta),
                LossKind::Kto => kto_loss_fixed_zref(&kto_batch, m, &reference, beta, KtoWeights::default(), zref),
            })?;
            rows.push(GradCheckRow {
                model: name.to_string(),
                loss,
                report,
            });
        }
    }
    Ok(rows)
}

pub fn gradcheck_csv(rows: &[GradCheckRow]) -> String {
    let mut s = String::from("model,loss,probes,eps,max_rel_error,max_abs_error,worst_index\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:e},{:e},{}\n",
            r.model,
            r.loss,
            r.report.probes,
            r.report.eps,
            r.report.max_rel_error,
            r.report.max_abs_error,
            r.report.worst_index
        ));
    }
    s
}
