//! Shared test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xlingual::babel::{TokenKind, VocabLayout, ENGLISH};
use xlingual::lm::{Model, ModelMode};
use xlingual::reward::ScoredResponse;
use xlingual::train::LossOutput;

/// Naive transformer forward reading parameters by segment name.
pub fn oracle_logprob(model: &Model, prompt: &[u32], response: &[u32]) -> f64 {
    let cfg = model.config();
    let lay = model.layout();
    let p = &model.params().0;
    let get = |name: &str| -> &[f64] { &p[lay.segment(name).unwrap().range()] };
    let d = cfg.d_model;
    let hdim = d * cfg.mlp_ratio;
    let v = cfg.vocab_size;
    let nh = cfg.n_heads;
    let hs = d / nh;
    let toks: Vec<u32> = prompt.iter().chain(response).copied().collect();
    let n = toks.len();

    fn ln(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
        let d = x.len() as f64;
        let mu = x.iter().sum::<f64>() / d;
        let var = x.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / d;
        x.iter()
            .enumerate()
            .map(|(i, a)| (a - mu) / (var + 1e-5).sqrt() * g[i] + b[i])
            .collect()
    }
    fn lin(x: &[f64], w: &[f64], b: &[f64], out: usize) -> Vec<f64> {
        (0..out)
            .map(|j| b[j] + x.iter().enumerate().map(|(i, a)| a * w[i * out + j]).sum::<f64>())
            .collect()
    }
    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    }

    let mut xs: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            let e = &get("wte")[toks[t] as usize * d..][..d];
            let pe = &get("wpe")[t * d..][..d];
            e.iter().zip(pe).map(|(a, b)| a + b).collect()
        })
        .collect();
    for l in 0..cfg.n_layers {
        let nm = |s: &str| format!("h{l}.{s}");
        let qkv: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                let a = ln(x, get(&nm("ln1.g")), get(&nm("ln1.b")));
                lin(&a, get(&nm("attn.wqkv")), get(&nm("attn.bqkv")), 3 * d)
            })
            .collect();
        for t in 0..n {
            let mut cat = vec![0.0; d];
            for h in 0..nh {
                let q = &qkv[t][h * hs..(h + 1) * hs];
                let scores: Vec<f64> = (0..=t)
                    .map(|s| {
                        let k = &qkv[s][d + h * hs..d + (h + 1) * hs];
                        q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (hs as f64).sqrt()
                    })
                    .collect();
                let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
                for s in 0..=t {
                    let w = (scores[s] - mx).exp() / z;
                    for i in 0..hs {
                        cat[h * hs + i] += w * qkv[s][2 * d + h * hs + i];
                    }
                }
            }
            let o = lin(&cat, get(&nm("attn.wo")), get(&nm("attn.bo")), d);
            for i in 0..d {
                xs[t][i] += o[i];
            }
        }
        for x in xs.iter_mut() {
            let a = ln(x, get(&nm("ln2.g")), get(&nm("ln2.b")));
            let hdn: Vec<f64> = lin(&a, get(&nm("mlp.w1")), get(&nm("mlp.b1")), hdim)
                .into_iter()
                .map(gelu)
                .collect();
            let o = lin(&hdn, get(&nm("mlp.w2")), get(&nm("mlp.b2")), d);
            for i in 0..d {
                x[i] += o[i];
            }
        }
    }
    let mut total = 0.0;
    for (i, &y) in response.iter().enumerate() {
        let t = prompt.len() - 1 + i;
        let f = ln(&xs[t], get("lnf.g"), get("lnf.b"));
        let logits = lin(&f, get("wout"), get("bout"), v);
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let lse = mx + logits.iter().map(|a| (a - mx).exp()).sum::<f64>().ln();
        total += logits[y as usize] - lse;
    }
    total
}

/// Straight-line log-probability for either architecture.
pub fn oracle_total(model: &Model, prompt: &[u32], response: &[u32]) -> f64 {
    match model.config().mode {
        ModelMode::Transformer => oracle_logprob(model, prompt, response),
        ModelMode::Bigram => {
            let v = model.config().vocab_size;
            let p = &model.params().0;
            let toks: Vec<u32> = prompt.iter().chain(response).copied().collect();
            let mut total = 0.0;
            for i in prompt.len()..toks.len() {
                let row = &p[toks[i - 1] as usize * v..][..v];
                let mx = row.iter().cloned().fold(f64::MIN, f64::max);
                let lse = mx + row.iter().map(|a| (a - mx).exp()).sum::<f64>().ln();
                total += row[toks[i] as usize] - lse;
            }
            total
        }
    }
}

pub fn ratio(p: &Model, q: &Model, x: &[u32], y: &[u32], beta: f64) -> f64 {
    beta * (oracle_total(p, x, y) - oracle_total(q, x, y))
}

/// The English instruction, preceded by the target-language tag unless the
/// target is English.
pub fn mapped_prompt(vocab: &VocabLayout, lang: usize, prompt_en: &[u32]) -> Vec<u32> {
    let mut x = Vec::new();
    if lang != ENGLISH {
        x.push(vocab.tag(lang));
    }
    x.extend_from_slice(prompt_en);
    x
}

/// Noise-free translation: same symbol, English block.
pub fn to_english(vocab: &VocabLayout, y: &[u32]) -> Vec<u32> {
    y.iter()
        .map(|&t| match vocab.decode(t) {
            Some(TokenKind::Content { index, .. }) => vocab.encode(ENGLISH, index),
            _ => t,
        })
        .collect()
}

/// Largest `|a − n| / max(|a|, |n|, 1e-6)` over `probes` random parameters.
pub fn fd_check(policy: &Model, probes: usize, seed: u64, f: impl Fn(&Model) -> LossOutput) -> f64 {
    let eps = 1e-5;
    let g = f(policy).grads.0;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut m = policy.clone();
    for _ in 0..probes {
        let i = r.gen_range(0..g.len());
        let x = policy.params().0[i];
        m.params_mut()[i] = x + eps;
        let up = f(&m).loss;
        m.params_mut()[i] = x - eps;
        let down = f(&m).loss;
        m.params_mut()[i] = x;
        let n = (up - down) / (2.0 * eps);
        worst = worst.max((g[i] - n).abs() / g[i].abs().max(n.abs()).max(1e-6));
    }
    worst
}

/// Pools in which longer responses earn more raw reward: `raw = slope·len +
/// noise`, with the slope differing per language.
pub fn length_exploiting(seed: u64, prompts: u64, n: u32, slopes: &[f64]) -> Vec<ScoredResponse> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (lang, &slope) in slopes.iter().enumerate() {
        for pid in 0..prompts {
            for sid in 0..n {
                let len = r.gen_range(1..17usize);
                let raw = slope * len as f64 + r.gen_range(-0.3..0.3);
                out.push(ScoredResponse {
                    lang,
                    prompt_id: pid,
                    sample_id: sid,
                    tokens: vec![sid + 100; len],
                    raw,
                    reward: raw,
                    token_count: len,
                });
            }
        }
    }
    out
}

/// Expected grid: zero, then 40 points evenly spaced in log10 over [-4, 0].
pub fn reference_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend((0..40).map(|i| 10f64.powf(-4.0 + 4.0 * i as f64 / 39.0)));
    g
}

/// Signed mean length gap of the (best, worst) pairs at penalty `a`, by
/// sorting each pool.
pub fn brute_gap(pools: &[Vec<&ScoredResponse>], a: f64) -> f64 {
    let mut gaps = Vec::new();
    for pool in pools {
        let mut ranked: Vec<(f64, u32, usize)> = pool
            .iter()
            .map(|s| (s.raw - a * s.token_count as f64, s.sample_id, s.token_count))
            .collect();
        // Highest score first; among equals the smaller id first.
        ranked.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
        let best = ranked[0];
        let low = ranked.last().unwrap().0;
        let worst = ranked.iter().filter(|t| t.0 == low).min_by_key(|t| t.1).unwrap();
        if best.0 > worst.0 {
            gaps.push(best.2 as f64 - worst.2 as f64);
        }
    }
    if gaps.is_empty() {
        0.0
    } else {
        gaps.iter().sum::<f64>() / gaps.len() as f64
    }
}

pub fn brute_alpha(scored: &[ScoredResponse], lang: usize, grid: &[f64]) -> f64 {
    let mut by_prompt: BTreeMap<u64, Vec<&ScoredResponse>> = BTreeMap::new();
    for s in scored.iter().filter(|s| s.lang == lang) {
        by_prompt.entry(s.prompt_id).or_default().push(s);
    }
    let pools: Vec<_> = by_prompt.into_values().collect();
    let gaps: Vec<f64> = grid.iter().map(|&a| brute_gap(&pools, a).abs()).collect();
    let min = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    grid[gaps.iter().position(|&g| g == min).unwrap()]
}

/// Every file under `dir`, relative path and contents, sorted.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
