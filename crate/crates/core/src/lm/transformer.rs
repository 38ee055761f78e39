//! Forward and reverse pass of the mini decoder-only transformer.
//!
//! Pre-norm blocks: `x += Attn(LN1(x)); x += MLP(LN2(x))`, followed by a final
//! layer norm and an untied output projection.

use std::ops::Range;

use super::config::ModelConfig;
use super::linalg::{
    add_bias, gelu, gelu_grad, matmul, matmul_nt, matmul_tn, softmax_inplace, sum_rows_into,
};
use super::params::{BlockOffsets, TransformerOffsets};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
    pub out: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: LnCache,
    qkv: Vec<f64>,
    /// `[heads, T, T]`, zero above the diagonal.
    probs: Vec<f64>,
    att_out: Vec<f64>,
    ln2: LnCache,
    pre_act: Vec<f64>,
    act: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct TransformerCache {
    tokens: Vec<u32>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], d: usize) -> LnCache {
    let rows = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let h = (row[i] - mean) * rs;
            xhat[r * d + i] = h;
            out[r * d + i] = h * g[i] + b[i];
        }
    }
    LnCache { xhat, rstd, out }
}

/// Accumulates parameter grads into `dg`/`db` and input grads into `dx`.
fn layer_norm_backward(
    dout: &[f64],
    g: &[f64],
    cache: &LnCache,
    dg: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
    d: usize,
) {
    let rows = dout.len() / d;
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dy = &dout[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for i in 0..d {
            dg[i] += dy[i] * xh[i];
            db[i] += dy[i];
            dxhat[i] = dy[i] * g[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xh[i];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let rs = cache.rstd[r];
        for i in 0..d {
            dx[r * d + i] += rs * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
}

fn seg(params: &[f64], offset: usize, len: usize) -> &[f64] {
    &params[offset..offset + len]
}

/// Runs the full sequence and returns the cache plus logits for the positions
/// in `rows` (a row at position `t` predicts token `t + 1`).
pub(crate) fn forward(
    cfg: &ModelConfig,
    offs: &TransformerOffsets,
    params: &[f64],
    tokens: &[u32],
    rows: Range<usize>,
) -> (TransformerCache, Vec<f64>) {
    let t_len = tokens.len();
    let d = cfg.d_model;
    let v = cfg.vocab_size;

    let mut x = vec![0.0; t_len * d];
    for (t, &tok) in tokens.iter().enumerate() {
        let e = seg(params, offs.wte + tok as usize * d, d);
        let p = seg(params, offs.wpe + t * d, d);
        for i in 0..d {
            x[t * d + i] = e[i] + p[i];
        }
    }

    let mut layers = Vec::with_capacity(offs.blocks.len());
    for blk in &offs.blocks {
        let cache = block_forward(cfg, blk, params, &mut x, t_len);
        layers.push(cache);
    }

    let lnf = layer_norm(&x, seg(params, offs.lnf_g, d), seg(params, offs.lnf_b, d), d);
    let n_rows = rows.len();
    let mut logits = vec![0.0; n_rows * v];
    if n_rows > 0 {
        matmul(
            &lnf.out[rows.start * d..rows.end * d],
            seg(params, offs.wout, d * v),
            &mut logits,
            n_rows,
            d,
            v,
            false,
        );
        add_bias(&mut logits, seg(params, offs.bout, v));
    }
    (
        TransformerCache {
            tokens: tokens.to_vec(),
            layers,
            lnf,
        },
        logits,
    )
}

fn block_forward(
    cfg: &ModelConfig,
    blk: &BlockOffsets,
    params: &[f64],
    x: &mut [f64],
    t_len: usize,
) -> LayerCache {
    let d = cfg.d_model;
    let hd = cfg.hidden_dim();
    let n_heads = cfg.n_heads;
    let head = cfg.head_dim();
    let scale = 1.0 / (head as f64).sqrt();

    let ln1 = layer_norm(x, seg(params, blk.ln1_g, d), seg(params, blk.ln1_b, d), d);
    let mut qkv = vec![0.0; t_len * 3 * d];
    matmul(&ln1.out, seg(params, blk.wqkv, d * 3 * d), &mut qkv, t_len, d, 3 * d, false);
    add_bias(&mut qkv, seg(params, blk.bqkv, 3 * d));

    let mut probs = vec![0.0; n_heads * t_len * t_len];
    let mut att_out = vec![0.0; t_len * d];
    let stride = 3 * d;
    for h in 0..n_heads {
        let qo = h * head;
        let ko = d + h * head;
        let vo = 2 * d + h * head;
        for t in 0..t_len {
            let prow = &mut probs[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
            let q = &qkv[t * stride + qo..t * stride + qo + head];
            for s in 0..=t {
                let k = &qkv[s * stride + ko..s * stride + ko + head];
                prow[s] = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            softmax_inplace(&mut prow[..=t]);
            let out = &mut att_out[t * d + qo..t * d + qo + head];
            for s in 0..=t {
                let p = prow[s];
                let vv = &qkv[s * stride + vo..s * stride + vo + head];
                out.iter_mut().zip(vv).for_each(|(o, val)| *o += p * val);
            }
        }
    }

    let mut proj = vec![0.0; t_len * d];
    matmul(&att_out, seg(params, blk.wo, d * d), &mut proj, t_len, d, d, false);
    add_bias(&mut proj, seg(params, blk.bo, d));
    x.iter_mut().zip(&proj).for_each(|(a, b)| *a += b);

    let ln2 = layer_norm(x, seg(params, blk.ln2_g, d), seg(params, blk.ln2_b, d), d);
    let mut pre_act = vec![0.0; t_len * hd];
    matmul(&ln2.out, seg(params, blk.w1, d * hd), &mut pre_act, t_len, d, hd, false);
    add_bias(&mut pre_act, seg(params, blk.b1, hd));
    let act: Vec<f64> = pre_act.iter().map(|&z| gelu(z)).collect();
    let mut mlp = vec![0.0; t_len * d];
    matmul(&act, seg(params, blk.w2, hd * d), &mut mlp, t_len, hd, d, false);
    add_bias(&mut mlp, seg(params, blk.b2, d));
    x.iter_mut().zip(&mlp).for_each(|(a, b)| *a += b);

    LayerCache {
        ln1,
        qkv,
        probs,
        att_out,
        ln2,
        pre_act,
        act,
    }
}

/// Accumulates `∂L/∂θ` into `grad` given `∂L/∂logits` for `rows`.
pub(crate) fn backward(
    cfg: &ModelConfig,
    offs: &TransformerOffsets,
    params: &[f64],
    cache: &TransformerCache,
    rows: Range<usize>,
    dlogits: &[f64],
    grad: &mut [f64],
) {
    let t_len = cache.tokens.len();
    let d = cfg.d_model;
    let v = cfg.vocab_size;
    let n_rows = rows.len();

    // Output projection.
    let lnf_rows = &cache.lnf.out[rows.start * d..rows.end * d];
    matmul_tn(lnf_rows, dlogits, &mut grad[offs.wout..offs.wout + d * v], d, n_rows, v, true);
    sum_rows_into(dlogits, &mut grad[offs.bout..offs.bout + v]);
    let mut dlnf = vec![0.0; t_len * d];
    matmul_nt(
        dlogits,
        seg(params, offs.wout, d * v),
        &mut dlnf[rows.start * d..rows.end * d],
        n_rows,
        v,
        d,
        false,
    );

    let mut dx = vec![0.0; t_len * d];
    {
        let (dg, db) = split_pair(grad, offs.lnf_g, offs.lnf_b, d);
        layer_norm_backward(&dlnf, seg(params, offs.lnf_g, d), &cache.lnf, dg, db, &mut dx, d);
    }

    for (blk, lc) in offs.blocks.iter().zip(&cache.layers).rev() {
        block_backward(cfg, blk, params, lc, &mut dx, grad, t_len);
    }

    for (t, &tok) in cache.tokens.iter().enumerate() {
        let row = &dx[t * d..(t + 1) * d];
        let e = offs.wte + tok as usize * d;
        grad[e..e + d].iter_mut().zip(row).for_each(|(g, r)| *g += r);
        let p = offs.wpe + t * d;
        grad[p..p + d].iter_mut().zip(row).for_each(|(g, r)| *g += r);
    }
}

/// Two disjoint `len`-long mutable windows of `grad`, `a` before `b`.
fn split_pair(grad: &mut [f64], a: usize, b: usize, len: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + len <= b);
    let (left, right) = grad.split_at_mut(b);
    (&mut left[a..a + len], &mut right[..len])
}

fn block_backward(
    cfg: &ModelConfig,
    blk: &BlockOffsets,
    params: &[f64],
    lc: &LayerCache,
    dx: &mut [f64],
    grad: &mut [f64],
    t_len: usize,
) {
    let d = cfg.d_model;
    let hd = cfg.hidden_dim();
    let n_heads = cfg.n_heads;
    let head = cfg.head_dim();
    let scale = 1.0 / (head as f64).sqrt();

    // MLP branch: x_out = x_mid + act·W2 + b2.
    let mut dact = vec![0.0; t_len * hd];
    matmul_nt(dx, seg(params, blk.w2, hd * d), &mut dact, t_len, d, hd, false);
    matmul_tn(&lc.act, dx, &mut grad[blk.w2..blk.w2 + hd * d], hd, t_len, d, true);
    sum_rows_into(dx, &mut grad[blk.b2..blk.b2 + d]);
    for (g, &z) in dact.iter_mut().zip(&lc.pre_act) {
        *g *= gelu_grad(z);
    }
    matmul_tn(&lc.ln2.out, &dact, &mut grad[blk.w1..blk.w1 + d * hd], d, t_len, hd, true);
    sum_rows_into(&dact, &mut grad[blk.b1..blk.b1 + hd]);
    let mut dln2 = vec![0.0; t_len * d];
    matmul_nt(&dact, seg(params, blk.w1, d * hd), &mut dln2, t_len, hd, d, false);
    {
        let (dg, db) = split_pair(grad, blk.ln2_g, blk.ln2_b, d);
        layer_norm_backward(&dln2, seg(params, blk.ln2_g, d), &lc.ln2, dg, db, dx, d);
    }

    // Attention branch: x_mid = x_in + att_out·Wo + bo.
    let mut datt = vec![0.0; t_len * d];
    matmul_nt(dx, seg(params, blk.wo, d * d), &mut datt, t_len, d, d, false);
    matmul_tn(&lc.att_out, dx, &mut grad[blk.wo..blk.wo + d * d], d, t_len, d, true);
    sum_rows_into(dx, &mut grad[blk.bo..blk.bo + d]);

    let stride = 3 * d;
    let mut dqkv = vec![0.0; t_len * stride];
    let mut dp = vec![0.0; t_len];
    for h in 0..n_heads {
        let qo = h * head;
        let ko = d + h * head;
        let vo = 2 * d + h * head;
        for t in 0..t_len {
            let prow = &lc.probs[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
            let dout = &datt[t * d + qo..t * d + qo + head];
            let mut dot = 0.0;
            for s in 0..=t {
                let vv = &lc.qkv[s * stride + vo..s * stride + vo + head];
                dp[s] = dout.iter().zip(vv).map(|(a, b)| a * b).sum();
                dot += prow[s] * dp[s];
                let dv = &mut dqkv[s * stride + vo..s * stride + vo + head];
                dv.iter_mut().zip(dout).for_each(|(g, o)| *g += prow[s] * o);
            }
            for s in 0..=t {
                let ds = prow[s] * (dp[s] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for i in 0..head {
                    dqkv[t * stride + qo + i] += ds * lc.qkv[s * stride + ko + i];
                    dqkv[s * stride + ko + i] += ds * lc.qkv[t * stride + qo + i];
                }
            }
        }
    }

    matmul_tn(&lc.ln1.out, &dqkv, &mut grad[blk.wqkv..blk.wqkv + d * stride], d, t_len, stride, true);
    sum_rows_into(&dqkv, &mut grad[blk.bqkv..blk.bqkv + stride]);
    let mut dln1 = vec![0.0; t_len * d];
    matmul_nt(&dqkv, seg(params, blk.wqkv, d * stride), &mut dln1, t_len, stride, d, false);
    let (dg, db) = split_pair(grad, blk.ln1_g, blk.ln1_b, d);
    layer_norm_backward(&dln1, seg(params, blk.ln1_g, d), &lc.ln1, dg, db, dx, d);
}

/// Incremental decoding state holding per-layer key/value rows.
#[derive(Debug, Clone)]
pub(crate) struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    pub pos: usize,
}

impl KvCache {
    pub fn new(n_layers: usize) -> Self {
        KvCache {
            keys: vec![Vec::new(); n_layers],
            values: vec![Vec::new(); n_layers],
            pos: 0,
        }
    }
}

/// Feeds one token at position `kv.pos` and returns next-token logits.
pub(crate) fn decode_step(
    cfg: &ModelConfig,
    offs: &TransformerOffsets,
    params: &[f64],
    kv: &mut KvCache,
    token: u32,
) -> Vec<f64> {
    let d = cfg.d_model;
    let hd = cfg.hidden_dim();
    let v = cfg.vocab_size;
    let head = cfg.head_dim();
    let scale = 1.0 / (head as f64).sqrt();
    let pos = kv.pos;

    let mut x: Vec<f64> = seg(params, offs.wte + token as usize * d, d)
        .iter()
        .zip(seg(params, offs.wpe + pos * d, d))
        .map(|(a, b)| a + b)
        .collect();

    for (li, blk) in offs.blocks.iter().enumerate() {
        let ln1 = layer_norm(&x, seg(params, blk.ln1_g, d), seg(params, blk.ln1_b, d), d);
        let mut qkv = vec![0.0; 3 * d];
        matmul(&ln1.out, seg(params, blk.wqkv, d * 3 * d), &mut qkv, 1, d, 3 * d, false);
        add_bias(&mut qkv, seg(params, blk.bqkv, 3 * d));
        kv.keys[li].extend_from_slice(&qkv[d..2 * d]);
        kv.values[li].extend_from_slice(&qkv[2 * d..]);
        let keys = &kv.keys[li];
        let values = &kv.values[li];

        let mut att_out = vec![0.0; d];
        let mut scores = vec![0.0; pos + 1];
        for h in 0..cfg.n_heads {
            let q = &qkv[h * head..(h + 1) * head];
            for (s, sc) in scores.iter_mut().enumerate() {
                let k = &keys[s * d + h * head..s * d + (h + 1) * head];
                *sc = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            softmax_inplace(&mut scores);
            let out = &mut att_out[h * head..(h + 1) * head];
            for (s, &p) in scores.iter().enumerate() {
                let vv = &values[s * d + h * head..s * d + (h + 1) * head];
                out.iter_mut().zip(vv).for_each(|(o, val)| *o += p * val);
            }
        }
        let mut proj = vec![0.0; d];
        matmul(&att_out, seg(params, blk.wo, d * d), &mut proj, 1, d, d, false);
        add_bias(&mut proj, seg(params, blk.bo, d));
        x.iter_mut().zip(&proj).for_each(|(a, b)| *a += b);

        let ln2 = layer_norm(&x, seg(params, blk.ln2_g, d), seg(params, blk.ln2_b, d), d);
        let mut pre = vec![0.0; hd];
        matmul(&ln2.out, seg(params, blk.w1, d * hd), &mut pre, 1, d, hd, false);
        add_bias(&mut pre, seg(params, blk.b1, hd));
        pre.iter_mut().for_each(|z| *z = gelu(*z));
        let mut mlp = vec![0.0; d];
        matmul(&pre, seg(params, blk.w2, hd * d), &mut mlp, 1, hd, d, false);
        add_bias(&mut mlp, seg(params, blk.b2, d));
        x.iter_mut().zip(&mlp).for_each(|(a, b)| *a += b);
    }

    let lnf = layer_norm(&x, seg(params, offs.lnf_g, d), seg(params, offs.lnf_b, d), d);
    let mut logits = vec![0.0; v];
    matmul(&lnf.out, seg(params, offs.wout, d * v), &mut logits, 1, d, v, false);
    add_bias(&mut logits, seg(params, offs.bout, v));
    kv.pos += 1;
    logits
}
