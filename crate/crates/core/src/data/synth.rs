//! Synthetic datasets: 1-D polynomial regression and Gaussian blobs.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::{Dataset, Targets};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolyKind {
    /// `y = 2x^2 - 1` on `x in [-1, 1]`.
    Poly2,
    /// `y = (x - 3)^3` on `x in [2, 4]`.
    Poly3,
}

impl PolyKind {
    pub fn domain(self) -> (f64, f64) {
        match self {
            PolyKind::Poly2 => (-1.0, 1.0),
            PolyKind::Poly3 => (2.0, 4.0),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            PolyKind::Poly2 => 2.0 * x * x - 1.0,
            PolyKind::Poly3 => (x - 3.0).powi(3),
        }
    }
}

/// `n` points on a uniform grid over the kind's domain (endpoints included)
/// with targets perturbed by `N(0, noise_std^2)`.
pub fn gen_polynomial(kind: PolyKind, n: usize, noise_std: f64, seed: u64) -> Result<Dataset<f64>> {
    if n == 0 {
        return Err(Error::config("polynomial dataset needs n >= 1"));
    }
    let noise = Normal::new(0.0, noise_std)
        .map_err(|_| Error::config(format!("noise std must be finite and nonnegative, got {noise_std}")))?;
    let (lo, hi) = kind.domain();
    let mut rng = seed::rng(seed);
    let xs: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let ys: Vec<f64> = xs.iter().map(|&x| kind.eval(x) + noise.sample(&mut rng)).collect();
    Dataset::new(
        Array2::from_shape_vec((n, 1), xs).expect("n x 1"),
        Targets::Values(Array2::from_shape_vec((n, 1), ys).expect("n x 1")),
    )
}

/// Isotropic unit-variance Gaussian clusters around centers drawn from
/// `N(0, separation^2 I)`. Rows are grouped by class.
pub fn gen_blobs(n_classes: usize, n_per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset<f64>> {
    if n_classes == 0 || n_per_class == 0 || dim == 0 {
        return Err(Error::config("blob generator needs positive class count, class size and dimension"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::config(format!("separation must be nonnegative, got {separation}")));
    }
    let mut rng = seed::rng(seed);
    let centers = Array2::from_shape_fn((n_classes, dim), |_| {
        separation * rng.sample::<f64, _>(StandardNormal)
    });
    let n = n_classes * n_per_class;
    let mut inputs = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for c in 0..n_classes {
        for k in 0..n_per_class {
            let row = c * n_per_class + k;
            for j in 0..dim {
                inputs[[row, j]] = centers[[c, j]] + rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(c);
        }
    }
    Dataset::new(inputs, Targets::Classes(labels))
}
