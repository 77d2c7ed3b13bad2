//! Weight matching: coordinate ascent over hidden layers, each step a linear
//! assignment that maximizes the Frobenius alignment of `w_a` with the
//! permuted `w_b`.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{solve_assignment, AssignmentProblem, NetworkPermutation, Sense};
use crate::nn::LayeredNetwork;
use crate::{seed, Error, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatchResult {
    /// Permutation to apply to `w_b`.
    pub perm: NetworkPermutation,
    /// Sweeps run, including the final one that changed nothing.
    pub sweeps_used: usize,
    pub converged: bool,
    /// Total alignment objective at the start and after every accepted layer update.
    pub objective_trace: Vec<f64>,
}

struct Layers {
    w: Vec<Array2<f64>>,
    b: Vec<Array1<f64>>,
}

fn to_f64<F: Real>(net: &LayeredNetwork<F>) -> Layers {
    Layers {
        w: (0..net.num_layers()).map(|l| net.weight(l).mapv(|x| x.as_f64())).collect(),
        b: (0..net.num_layers()).map(|l| net.bias(l).mapv(|x| x.as_f64())).collect(),
    }
}

fn side<'a>(perms: &'a [Vec<usize>], index: usize) -> Option<&'a [usize]> {
    index.checked_sub(1).and_then(|i| perms.get(i)).map(|p| p.as_slice())
}

/// `sum_l <W_a, P W_b P^T> + <b_a, P b_b>`.
fn total_objective(a: &Layers, b: &Layers, perms: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for l in 0..a.w.len() {
        let rows = side(perms, l + 1);
        let cols = side(perms, l);
        let (wa, wb) = (&a.w[l], &b.w[l]);
        for i in 0..wa.nrows() {
            let si = rows.map_or(i, |r| r[i]);
            for j in 0..wa.ncols() {
                let sj = cols.map_or(j, |c| c[j]);
                total += wa[[i, j]] * wb[[si, sj]];
            }
            total += a.b[l][i] * b.b[l][si];
        }
    }
    total
}

/// Similarity `S[i, m]` of neuron `i` of `w_a` with neuron `m` of `w_b` in
/// hidden layer `h` (0-based), given the other layers' permutations.
fn similarity(a: &Layers, b: &Layers, perms: &[Vec<usize>], h: usize) -> Array2<f64> {
    let l = h; // weight index whose rows are hidden layer h
    let wb_in = match side(perms, l) {
        Some(p) => b.w[l].select(Axis(1), p),
        None => b.w[l].clone(),
    };
    let mut s = a.w[l].dot(&wb_in.t());
    let ba = a.b[l].view().insert_axis(Axis(1));
    let bb = b.b[l].view().insert_axis(Axis(0));
    s += &ba.dot(&bb);
    let wb_out = match side(perms, l + 2) {
        Some(p) => b.w[l + 1].select(Axis(0), p),
        None => b.w[l + 1].clone(),
    };
    s += &a.w[l + 1].t().dot(&wb_out);
    s
}

/// Coordinate ascent from the identity, sweeping hidden layers in a random
/// order per sweep (drawn from `seed`) until a sweep changes nothing or
/// `max_sweeps` is reached. A layer update is accepted only if it strictly
/// increases the objective, so the trace is non-decreasing.
pub fn weight_match<F: Real>(
    w_a: &LayeredNetwork<F>,
    w_b: &LayeredNetwork<F>,
    max_sweeps: usize,
    seed: u64,
) -> Result<WeightMatchResult> {
    if w_a.spec().layer_widths != w_b.spec().layer_widths {
        return Err(Error::config(format!(
            "cannot match networks with widths {:?} and {:?}",
            w_a.spec().layer_widths,
            w_b.spec().layer_widths
        )));
    }
    if max_sweeps == 0 {
        return Err(Error::config("weight matching needs max_sweeps >= 1"));
    }
    let a = to_f64(w_a);
    let b = to_f64(w_b);
    let mut perm = NetworkPermutation::identity(w_a.spec());
    let hidden = perm.perms.len();
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..hidden).collect();
    let mut current = total_objective(&a, &b, &perm.perms);
    let mut trace = vec![current];
    let mut sweeps_used = 0;
    let mut converged = false;

    for sweep in 1..=max_sweeps {
        sweeps_used = sweep;
        order.shuffle(&mut rng);
        let mut progress = false;
        for &h in &order {
            let s = similarity(&a, &b, &perm.perms, h);
            let old: f64 = perm.perms[h].iter().enumerate().map(|(i, &m)| s[[i, m]]).sum();
            let (candidate, new) = solve_assignment(&AssignmentProblem::new(s, Sense::Maximize))?;
            if new > old + 1e-12 * (1.0 + old.abs()) {
                perm.perms[h] = candidate;
                current = total_objective(&a, &b, &perm.perms);
                trace.push(current);
                progress = true;
            }
        }
        if !progress {
            converged = true;
            break;
        }
    }
    Ok(WeightMatchResult {
        perm,
        sweeps_used,
        converged,
        objective_trace: trace,
    })
}
