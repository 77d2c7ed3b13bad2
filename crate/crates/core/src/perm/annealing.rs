//! Simulated-annealing search for a permutation of `w_b` that minimizes the
//! loss of the midpoint `0.5 * w_a + 0.5 * P(w_b)`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{permute_params, NetworkPermutation};
use crate::connect::interpolate;
use crate::nn::{evaluate, Dataset, LayeredNetwork, LossKind, NetworkSpec, ParamVector};
use crate::{seed, Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule {
    /// Initial temperature in midpoint-loss units.
    pub t0: f64,
    /// Multiplicative decay applied after every proposal.
    pub decay: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule { t0: 1.0, decay: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealResult {
    pub perm: NetworkPermutation,
    /// Midpoint loss before the first proposal and after each one (`iters + 1` entries).
    pub trace: Vec<f64>,
    pub accepted: usize,
}

fn midpoint_loss<F: Real>(
    spec: &NetworkSpec,
    w_a: &ParamVector<F>,
    w_b: &ParamVector<F>,
    perm: &NetworkPermutation,
    data: &Dataset<F>,
    loss: LossKind,
) -> Result<f64> {
    let pb = permute_params(spec, w_b, perm)?;
    let mid = interpolate(w_a, &pb, 0.5)?;
    Ok(evaluate(&LayeredNetwork::from_params(spec, mid)?, data, loss)?.loss)
}

/// Each proposal swaps two neurons of one uniformly chosen hidden layer.
/// Improvements are always accepted, others with probability `exp(-delta / t)`
/// (never when `t == 0`), and `t <- t * decay` after every proposal.
pub fn simulated_annealing_match<F: Real>(
    w_a: &LayeredNetwork<F>,
    w_b: &LayeredNetwork<F>,
    data: &Dataset<F>,
    loss: LossKind,
    iters: usize,
    schedule: AnnealSchedule,
    seed: u64,
) -> Result<AnnealResult> {
    let spec = w_a.spec();
    if spec.layer_widths != w_b.spec().layer_widths {
        return Err(Error::config(format!(
            "cannot match networks with widths {:?} and {:?}",
            spec.layer_widths,
            w_b.spec().layer_widths
        )));
    }
    if !(schedule.t0 >= 0.0 && schedule.t0.is_finite() && schedule.decay >= 0.0 && schedule.decay.is_finite()) {
        return Err(Error::config("annealing temperature and decay must be finite and nonnegative"));
    }
    let mut perm = NetworkPermutation::identity(spec);
    let mut current = midpoint_loss(spec, w_a.params(), w_b.params(), &perm, data, loss)?;
    let mut trace = Vec::with_capacity(iters + 1);
    trace.push(current);
    let swappable: Vec<usize> = (0..perm.perms.len()).filter(|&h| perm.perms[h].len() >= 2).collect();
    let mut rng = seed::rng(seed);
    let mut t = schedule.t0;
    let mut accepted = 0;

    for _ in 0..iters {
        if !swappable.is_empty() {
            let h = swappable[rng.random_range(0..swappable.len())];
            let width = perm.perms[h].len();
            let i = rng.random_range(0..width);
            let mut j = rng.random_range(0..width - 1);
            if j >= i {
                j += 1;
            }
            let mut proposal = perm.clone();
            proposal.perms[h].swap(i, j);
            let candidate = midpoint_loss(spec, w_a.params(), w_b.params(), &proposal, data, loss)?;
            let delta = candidate - current;
            let u: f64 = rng.random();
            let accept = delta < 0.0 || (t > 0.0 && u < (-delta / t).exp());
            if accept {
                perm = proposal;
                current = candidate;
                accepted += 1;
            }
        }
        t *= schedule.decay;
        trace.push(current);
    }
    Ok(AnnealResult { perm, trace, accepted })
}
