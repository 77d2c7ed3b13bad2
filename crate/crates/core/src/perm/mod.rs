//! Neuron permutations of hidden layers and the matching algorithms built on them.
//!
//! A [`NetworkPermutation`] holds one permutation per hidden layer. Applying
//! it relabels neurons: new neuron `i` of hidden layer `l` is old neuron
//! `perms[l][i]`, i.e. `W_l <- P_l W_l P_{l-1}^T` and `b_l <- P_l b_l` with the
//! input and output orderings left alone. The network function is unchanged.

mod annealing;
mod assignment;
mod weight_matching;

use serde::{Deserialize, Serialize};

pub use annealing::{simulated_annealing_match, AnnealSchedule, AnnealResult};
pub use assignment::{solve_assignment, AssignmentProblem, Sense};
pub use weight_matching::{weight_match, WeightMatchResult};

use crate::nn::{LayeredNetwork, NetworkSpec, ParamVector};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetworkPermutation {
    pub perms: Vec<Vec<usize>>,
}

fn is_bijection(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &i in p {
        if i >= p.len() || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

impl NetworkPermutation {
    pub fn identity(spec: &NetworkSpec) -> Self {
        NetworkPermutation {
            perms: spec.hidden_widths().iter().map(|&w| (0..w).collect()).collect(),
        }
    }

    /// Uniformly random permutation of every hidden layer.
    pub fn random(spec: &NetworkSpec, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut rng = crate::seed::rng(seed);
        let mut p = Self::identity(spec);
        for layer in &mut p.perms {
            layer.shuffle(&mut rng);
        }
        p
    }

    pub fn is_identity(&self) -> bool {
        self.perms.iter().all(|p| p.iter().enumerate().all(|(i, &j)| i == j))
    }

    /// Checks bijectivity and widths against `spec`.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let hidden = spec.hidden_widths();
        if self.perms.len() != hidden.len() {
            return Err(Error::dimension(format!(
                "permutation has {} layers, network has {} hidden layers",
                self.perms.len(),
                hidden.len()
            )));
        }
        for (l, (p, &w)) in self.perms.iter().zip(hidden).enumerate() {
            if p.len() != w {
                return Err(Error::dimension(format!(
                    "hidden layer {}: permutation of {} entries for width {w}",
                    l + 1,
                    p.len()
                )));
            }
            if !is_bijection(p) {
                return Err(Error::config(format!("hidden layer {}: not a bijection", l + 1)));
            }
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        NetworkPermutation {
            perms: self
                .perms
                .iter()
                .map(|p| {
                    let mut inv = vec![0; p.len()];
                    for (i, &j) in p.iter().enumerate() {
                        inv[j] = i;
                    }
                    inv
                })
                .collect(),
        }
    }

    /// Permutation equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &Self) -> Self {
        NetworkPermutation {
            perms: self
                .perms
                .iter()
                .zip(&next.perms)
                .map(|(p, q)| q.iter().map(|&i| p[i]).collect())
                .collect(),
        }
    }

    /// Permutation of the input (`layer == 0`) or output side of layer `layer`.
    fn side(&self, index: usize) -> Option<&[usize]> {
        index.checked_sub(1).and_then(|i| self.perms.get(i)).map(|p| p.as_slice())
    }
}

/// Applies `p` to a flat parameter vector laid out for `spec`.
pub fn permute_params<F: Real>(spec: &NetworkSpec, w: &ParamVector<F>, p: &NetworkPermutation) -> Result<ParamVector<F>> {
    p.validate(spec)?;
    if w.len() != spec.param_count() {
        return Err(Error::dimension(format!(
            "parameter vector of length {} for {} parameters",
            w.len(),
            spec.param_count()
        )));
    }
    let mut out = w.clone();
    for (l, layer) in spec.layout().iter().enumerate() {
        let rows = p.side(l + 1);
        let cols = p.side(l);
        for i in 0..layer.rows {
            let src_i = rows.map_or(i, |r| r[i]);
            for j in 0..layer.cols {
                let src_j = cols.map_or(j, |c| c[j]);
                out[layer.weight_offset + i * layer.cols + j] = w[layer.weight_offset + src_i * layer.cols + src_j];
            }
            out[layer.bias_offset + i] = w[layer.bias_offset + src_i];
        }
    }
    Ok(out)
}

pub fn apply_permutation<F: Real>(net: &LayeredNetwork<F>, p: &NetworkPermutation) -> Result<LayeredNetwork<F>> {
    net.with_params(permute_params(net.spec(), net.params(), p)?)
}
