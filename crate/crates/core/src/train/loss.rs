//! Direct-alignment losses. Each returns the batch-mean loss together with
//! its exact gradient with respect to the policy parameters; the reference
//! model only contributes constants.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lm::{GradientVector, Model, Tape};
use crate::pairs::PreferencePair;

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: GradientVector,
    /// Named additive parts of `loss` (batch means).
    pub components: BTreeMap<String, f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Source of reference log-probabilities. The trainer memoizes them because
/// the reference stays fixed for a whole round.
pub(crate) trait RefLogProb {
    fn ref_logprob(&mut self, prompt: &[u32], response: &[u32]) -> Result<f64>;
}

impl RefLogProb for &Model {
    fn ref_logprob(&mut self, prompt: &[u32], response: &[u32]) -> Result<f64> {
        Ok(self.forward_logprob(prompt, response)?.total)
    }
}

/// `σ(β[logratio(y_w) − logratio(y_l)])` with
/// `logratio(y) = log π_θ(y|x) − log π_ref(y|x)`.
pub fn preference_prob(policy: &Model, reference: &Model, x: &[u32], yw: &[u32], yl: &[u32], beta: f64) -> Result<f64> {
    policy.check_same_vocab(reference)?;
    let lr = |y: &[u32]| -> Result<f64> {
        Ok(policy.forward_logprob(x, y)?.total - reference.forward_logprob(x, y)?.total)
    };
    Ok(sigmoid(beta * (lr(yw)? - lr(yl)?)))
}

pub(crate) fn pairwise_loss(
    batch: &[&PreferencePair],
    policy: &Model,
    reference: &mut dyn RefLogProb,
    beta: f64,
    nll: bool,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut tape = Tape::new();
    let (mut dpo, mut nll_sum) = (0.0, 0.0);
    for p in batch {
        let (wid, w) = policy.forward_recorded(&mut tape, &p.prompt, &p.chosen)?;
        let (lid, l) = policy.forward_recorded(&mut tape, &p.prompt, &p.rejected)?;
        let u = beta
            * ((w.total - reference.ref_logprob(&p.prompt, &p.chosen)?)
                - (l.total - reference.ref_logprob(&p.prompt, &p.rejected)?));
        dpo += softplus(-u);
        // d softplus(-u) / du = -σ(-u)
        let g = sigmoid(-u) * beta / n;
        tape.seed(wid, -g);
        tape.seed(lid, g);
        if nll {
            if p.chosen.is_empty() {
                return Err(Error::InvalidConfig("NLL term needs a nonempty chosen response".into()));
            }
            let len = p.chosen.len() as f64;
            nll_sum += -w.total / len;
            tape.seed(wid, -1.0 / (len * n));
        }
    }
    let mut components = BTreeMap::from([("dpo".to_string(), dpo / n)]);
    if nll {
        components.insert("nll".into(), nll_sum / n);
    }
    Ok(LossOutput {
        loss: (dpo + nll_sum) / n,
        grads: policy.backward(&tape)?,
        components,
    })
}

/// Mean `−log preference_prob` over the batch.
pub fn dpo_loss(batch: &[&PreferencePair], policy: &Model, reference: &Model, beta: f64) -> Result<LossOutput> {
    policy.check_same_vocab(reference)?;
    pairwise_loss(batch, policy, &mut { reference }, beta, false)
}

/// DPO plus the chosen response's length-normalized NLL; `|y⁺|` counts EOS.
pub fn dpo_nll_loss(batch: &[&PreferencePair], policy: &Model, reference: &Model, beta: f64) -> Result<LossOutput> {
    policy.check_same_vocab(reference)?;
    pairwise_loss(batch, policy, &mut { reference }, beta, true)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct KtoExample {
    pub prompt: Vec<u32>,
    pub response: Vec<u32>,
    pub desirable: bool,
}

/// Chosen responses become desirable examples, rejected ones undesirable.
pub fn kto_examples<'a>(pairs: impl IntoIterator<Item = &'a PreferencePair>) -> Vec<KtoExample> {
    pairs
        .into_iter()
        .flat_map(|p| {
            [
                KtoExample {
                    prompt: p.prompt.clone(),
                    response: p.chosen.clone(),
                    desirable: true,
                },
                KtoExample {
                    prompt: p.prompt.clone(),
                    response: p.rejected.clone(),
                    desirable: false,
                },
            ]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KtoWeights {
    pub desirable: f64,
    pub undesirable: f64,
}

impl Default for KtoWeights {
    fn default() -> Self {
        KtoWeights {
            desirable: 1.0,
            undesirable: 1.0,
        }
    }
}

pub(crate) fn zref_with(
    batch: &[&KtoExample],
    policy: &Model,
    reference: &mut dyn RefLogProb,
    beta: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut sorted = batch.to_vec();
    sorted.sort();
    let n = sorted.len();
    let mut sum = 0.0;
    for i in 0..n {
        let x = &sorted[i].prompt;
        let y = &sorted[(i + 1) % n].response;
        sum += beta * (policy.forward_logprob(x, y)?.total - reference.ref_logprob(x, y)?);
    }
    Ok((sum / n as f64).max(0.0))
}

/// KL baseline: `max(0, mean β·logratio)` over mismatched pairings, pairing
/// each prompt with the next example's response after sorting the batch.
/// A single-example batch pairs with itself.
pub fn estimate_zref(batch: &[&KtoExample], policy: &Model, reference: &Model, beta: f64) -> Result<f64> {
    policy.check_same_vocab(reference)?;
    zref_with(batch, policy, &mut { reference }, beta)
}

pub(crate) fn kto_loss_with(
    batch: &[&KtoExample],
    policy: &Model,
    reference: &mut dyn RefLogProb,
    beta: f64,
    weights: KtoWeights,
    zref: f64,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut tape = Tape::new();
    let mut total = 0.0;
    for ex in batch {
        let (id, lp) = policy.forward_recorded(&mut tape, &ex.prompt, &ex.response)?;
        let r = beta * (lp.total - reference.ref_logprob(&ex.prompt, &ex.response)?);
        let (lam, s) = if ex.desirable {
            (weights.desirable, sigmoid(r - zref))
        } else {
            (weights.undesirable, sigmoid(zref - r))
        };
        total += lam - lam * s;
        let dv_dr = lam * s * (1.0 - s) * if ex.desirable { 1.0 } else { -1.0 };
        tape.seed(id, -dv_dr * beta / n);
    }
    Ok(LossOutput {
        loss: total / n,
        grads: policy.backward(&tape)?,
        components: BTreeMap::from([("kto".to_string(), total / n), ("z_ref".to_string(), zref)]),
    })
}

/// As [`kto_loss`] with a caller-supplied `z_ref`.
pub fn kto_loss_fixed_zref(
    batch: &[&KtoExample],
    policy: &Model,
    reference: &Model,
    beta: f64,
    weights: KtoWeights,
    zref: f64,
) -> Result<LossOutput> {
    policy.check_same_vocab(reference)?;
    kto_loss_with(batch, policy, &mut { reference }, beta, weights, zref)
}

/// Mean `λ_y − v(x, y)` with `z_ref` estimated from the batch and held
/// constant. The `z_ref` component is reported but not part of the loss.
pub fn kto_loss(
    batch: &[&KtoExample],
    policy: &Model,
    reference: &Model,
    beta: f64,
    weights: KtoWeights,
) -> Result<LossOutput> {
    policy.check_same_vocab(reference)?;
    let zref = zref_with(batch, policy, &mut { reference }, beta)?;
    kto_loss_with(batch, policy, &mut { reference }, beta, weights, zref)
}
