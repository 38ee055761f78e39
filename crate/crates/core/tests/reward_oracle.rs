//! Rc, Rm and Rt recomputed from the straight-line forward pass plus plain
//! penalty arithmetic.

mod common;

use common::{mapped_prompt, ratio, to_english};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xlingual::babel::{transcode, VocabLayout, World, WorldConfig, ENGLISH, EOS};
use xlingual::lm::{Model, ModelConfig};
use xlingual::reward::{
    reward_rc, reward_rm, reward_rt, score_pool, RewardConfig, RewardInput, RewardVariant, ScoringModels,
};
use xlingual::rng::{rng_for, stream};
use xlingual::sampler::SampledResponse;

const TOL: f64 = 1e-12;

fn world() -> World {
    World::generate(
        WorldConfig {
            train_prompts: 20,
            eval_prompts: 5,
            ..WorldConfig::default()
        },
        4,
    )
    .unwrap()
}

fn models(w: &World, seed: u64) -> (Model, Model) {
    let mc = ModelConfig::desk_transformer(w.vocab.vocab_size());
    let fp = w.vocab.fingerprint();
    (
        Model::new(mc.clone(), fp.clone(), seed).unwrap(),
        Model::new(mc, fp, seed + 1000).unwrap(),
    )
}

fn random_response(vocab: &VocabLayout, lang: usize, r: &mut ChaCha8Rng) -> Vec<u32> {
    let n = r.gen_range(0..12);
    let mut y: Vec<u32> = (0..n).map(|_| vocab.encode(lang, r.gen_range(0..vocab.alphabet()))).collect();
    if r.gen_bool(0.8) {
        y.push(EOS);
    }
    y
}

#[test]
fn rewards_match_composed_oracle_on_fifty_cases() {
    let w = world();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for case in 0..50u64 {
        let (policy, reference) = models(&w, 100 + case);
        let task = &w.train.tasks[r.gen_range(0..w.train.len())];
        let lang = r.gen_range(0..w.vocab.num_langs());
        let prompt = task.prompt(&w.vocab, lang);
        let prompt_en = task.prompt(&w.vocab, ENGLISH);
        let y = if r.gen_bool(0.3) {
            task.ideal_response(&w.vocab, lang)
        } else {
            random_response(&w.vocab, lang, &mut r)
        };
        let alpha: Vec<f64> = (0..w.vocab.num_langs()).map(|_| r.gen_range(0.0..0.05)).collect();
        let beta = r.gen_range(0.05..0.5);
        let input = RewardInput {
            lang,
            prompt_id: task.id,
            sample_id: case as u32,
            prompt: &prompt,
            prompt_en: &prompt_en,
            response: &y,
        };
        let cfg = RewardConfig {
            beta,
            alpha: alpha.clone(),
            seed: 77,
            ..RewardConfig::default()
        };
        let penalty = alpha[lang] * y.len() as f64;

        let rc = reward_rc(&policy, &reference, &w.vocab, &input, &cfg).unwrap();
        let want = ratio(&policy, &reference, &mapped_prompt(&w.vocab, lang, &prompt_en), &y, beta) - penalty;
        assert!((rc - want).abs() < TOL, "case {case} rc {rc} vs {want}");

        let rm = reward_rm(&policy, &reference, &w.vocab, &input, &cfg).unwrap();
        let want = ratio(&policy, &reference, &prompt, &y, beta) - penalty;
        assert!((rm - want).abs() < TOL, "case {case} rm {rm} vs {want}");

        let rt = reward_rt(&policy, &reference, &w.vocab, &input, &cfg).unwrap();
        let want = ratio(&policy, &reference, &prompt_en, &to_english(&w.vocab, &y), beta) - penalty;
        assert!((rt - want).abs() < TOL, "case {case} rt {rt} vs {want}");

        // Noisy translation draws from the documented per-response stream.
        let noisy = RewardConfig {
            translate_noise: 0.3,
            ..cfg.clone()
        };
        let rt = reward_rt(&policy, &reference, &w.vocab, &input, &noisy).unwrap();
        let y_en = if lang == ENGLISH {
            y.clone()
        } else {
            let mut g = rng_for(77, &[stream::TRANSLATE, task.id, lang as u64, case]);
            transcode(&w.vocab, &y, lang, ENGLISH, 0.3, &mut g)
        };
        let want = ratio(&policy, &reference, &prompt_en, &y_en, beta) - penalty;
        assert!((rt - want).abs() < TOL, "case {case} noisy rt {rt} vs {want}");
    }
}

#[test]
fn pool_scores_match_oracle_for_every_variant_and_reference() {
    let w = world();
    let (policy, initial) = models(&w, 5);
    let previous = Model::new(ModelConfig::desk_transformer(w.vocab.vocab_size()), w.vocab.fingerprint(), 6).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut pool = Vec::new();
    for task in w.train.tasks.iter().take(4) {
        for lang in 0..w.vocab.num_langs() {
            for sid in 0..3u32 {
                let tokens = random_response(&w.vocab, lang, &mut r);
                pool.push(SampledResponse {
                    lang,
                    prompt_id: task.id,
                    sample_id: sid,
                    tokens,
                });
            }
        }
    }
    // A duplicate exercises the log-ratio memo.
    pool.push(SampledResponse {
        sample_id: 99,
        ..pool[0].clone()
    });
    let alpha = vec![0.01, 0.02, 0.03];
    for variant in [RewardVariant::Rc, RewardVariant::Rm, RewardVariant::Rt] {
        for reference in [xlingual::reward::ReferencePolicy::Initial, xlingual::reward::ReferencePolicy::Previous] {
            let cfg = RewardConfig {
                variant,
                alpha: alpha.clone(),
                reference,
                ..RewardConfig::default()
            };
            let m = ScoringModels {
                policy: &policy,
                initial: &initial,
                previous: Some(&previous),
            };
            let scored = score_pool(m, &w.vocab, &w.train, &pool, &cfg).unwrap();
            let ref_model = match reference {
                xlingual::reward::ReferencePolicy::Initial => &initial,
                xlingual::reward::ReferencePolicy::Previous => &previous,
            };
            for (s, p) in scored.iter().zip(&pool) {
                let task = w.train.tasks.iter().find(|t| t.id == p.prompt_id).unwrap();
                let prompt_en = task.prompt(&w.vocab, ENGLISH);
                let (x, y) = match variant {
                    RewardVariant::Rc => (mapped_prompt(&w.vocab, p.lang, &prompt_en), p.tokens.clone()),
                    RewardVariant::Rm => (task.prompt(&w.vocab, p.lang), p.tokens.clone()),
                    RewardVariant::Rt => (prompt_en, to_english(&w.vocab, &p.tokens)),
                };
                let raw = ratio(&policy, ref_model, &x, &y, 0.1);
                assert!((s.raw - raw).abs() < TOL, "{variant} raw {} vs {raw}", s.raw);
                let want = raw - alpha[p.lang] * p.tokens.len() as f64;
                assert!((s.reward - want).abs() < TOL);
                assert_eq!(s.token_count, p.tokens.len());
            }
        }
    }
}
