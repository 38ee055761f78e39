use rand::Rng as _;
use serde::Serialize;

use super::LossOutput;
use crate::error::Result;
use crate::lm::Model;
use crate::rng;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub probes: usize,
    pub eps: f64,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter index with the largest error.
    pub worst_index: usize,
}

/// Gradients smaller than this are compared in absolute terms. Central
/// differences cannot resolve a derivative below about `ulp(loss) / eps`
/// (1e-11 at eps 1e-5), so an exactly-zero analytic gradient, which occurs
/// when a logit cancels between chosen and rejected, would otherwise read as
/// a large relative error.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient of `loss` against central differences on
/// `probes` randomly chosen parameters. Relative error is
/// `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn gradcheck(
    model: &Model,
    probes: usize,
    eps: f64,
    seed: u64,
    loss: impl Fn(&Model) -> Result<LossOutput>,
) -> Result<GradCheckReport> {
    let analytic = loss(model)?.grads;
    let mut probe = model.clone();
    let mut r = rng::rng_for(seed, &[rng::stream::GRADCHECK]);
    let mut report = GradCheckReport {
        probes,
        eps,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
    };
    for _ in 0..probes {
        let i = r.gen_range(0..model.params().len());
        let orig = model.params().0[i];
        probe.params_mut()[i] = orig + eps;
        let up = loss(&probe)?.loss;
        probe.params_mut()[i] = orig - eps;
        let down = loss(&probe)?.loss;
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.0[i];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}
