//! Monte Carlo checker for the interpolation bounds of masked two-layer ReLU
//! networks `f(x) = v^T relu(U x)`.
//!
//! Two networks `(U, v)` and `(U', v')` share the entries whose mask bit is 0
//! and draw all other entries independently from `N(0, sigma^2)`. For inputs
//! uniform on the ball of radius `b` the difference function
//!
//! ```text
//! z_x(a) = (a v + (1-a) v')^T relu(g_a) - a v^T relu(U x) - (1-a) v'^T relu(U' x),
//! g_a    = (a U + (1-a) U') x
//! ```
//!
//! is averaged over `n_x` samples to estimate `z(a)`, and its first and second
//! derivatives are taken by finite differences on the alpha grid.

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connect::alpha_grid;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    /// Hidden width.
    pub h: usize,
    /// Input dimension.
    pub d: usize,
    /// Input-ball radius.
    pub b: f64,
    pub sigma_v: f64,
    pub sigma_u: f64,
    pub rho_v: f64,
    pub rho_u: f64,
    pub delta: f64,
    /// Monte Carlo input samples per trial.
    pub n_x: usize,
    pub alpha_grid_size: usize,
    /// Trials per point of the `rho_U` trend sweep.
    pub trend_trials: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            h: 512,
            d: 32,
            b: 1.0,
            sigma_v: 0.05,
            sigma_u: 0.05,
            rho_v: 0.4,
            rho_u: 0.4,
            delta: 0.1,
            n_x: 4096,
            alpha_grid_size: 21,
            trend_trials: 50,
        }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive, got {v}")))
            }
        };
        if self.h == 0 || self.d == 0 || self.n_x == 0 {
            return Err(Error::config("h, d and n_x must be at least 1"));
        }
        positive("b", self.b)?;
        positive("sigma_v", self.sigma_v)?;
        positive("sigma_u", self.sigma_u)?;
        for (name, r) in [("rho_v", self.rho_v), ("rho_u", self.rho_u)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.alpha_grid_size < 3 {
            return Err(Error::config("alpha grid needs at least 3 points for second differences"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerPair {
    pub u: Array2<f64>,
    pub u_prime: Array2<f64>,
    pub v: Array1<f64>,
    pub v_prime: Array1<f64>,
    /// 0 = shared entry.
    pub mask_u: Array2<bool>,
    pub mask_v: Array1<bool>,
}

fn exact_mask(n: usize, ratio: f64, rng: &mut seed::Rng) -> Vec<bool> {
    let k = ((ratio * n as f64).floor() as usize).min(n);
    let mut bits = vec![true; n];
    for z in index::sample(rng, n, k) {
        bits[z] = false;
    }
    bits
}

/// Draws a pair whose masked-out entries (bit 0) are shared.
pub fn sample_pair(cfg: &TheoryConfig, seed: u64) -> Result<TwoLayerPair> {
    cfg.validate()?;
    let (h, d) = (cfg.h, cfg.d);
    let mut rng = seed::rng(seed);
    let mask_u = Array2::from_shape_vec((h, d), exact_mask(h * d, cfg.rho_u, &mut rng)).expect("h x d");
    let mask_v = Array1::from(exact_mask(h, cfg.rho_v, &mut rng));
    let nu = Normal::new(0.0, cfg.sigma_u).expect("validated");
    let nv = Normal::new(0.0, cfg.sigma_v).expect("validated");
    let u = Array2::from_shape_simple_fn((h, d), || nu.sample(&mut rng));
    let mut u_prime = Array2::from_shape_simple_fn((h, d), || nu.sample(&mut rng));
    let v = Array1::from_shape_simple_fn(h, || nv.sample(&mut rng));
    let mut v_prime = Array1::from_shape_simple_fn(h, || nv.sample(&mut rng));
    ndarray::Zip::from(&mut u_prime).and(&u).and(&mask_u).for_each(|up, &x, &m| {
        if !m {
            *up = x;
        }
    });
    ndarray::Zip::from(&mut v_prime).and(&v).and(&mask_v).for_each(|vp, &x, &m| {
        if !m {
            *vp = x;
        }
    });
    Ok(TwoLayerPair {
        u,
        u_prime,
        v,
        v_prime,
        mask_u,
        mask_v,
    })
}

/// `n` points uniform in the open ball of radius `b` in `R^d`.
pub fn sample_ball(n: usize, d: usize, b: f64, seed: u64) -> Array2<f64> {
    let mut rng = seed::rng(seed);
    let mut xs = Array2::zeros((n, d));
    for mut row in xs.rows_mut() {
        let mut norm = 0.0;
        while norm == 0.0 {
            for x in row.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        let u: f64 = rng.random();
        let r = b * u.powf(1.0 / d as f64) / norm;
        row.mapv_inplace(|x| x * r);
    }
    xs
}

/// Pre-activations of both networks for a fixed input sample.
pub struct Activations {
    a: Array2<f64>,
    a_prime: Array2<f64>,
    relu_a: Array2<f64>,
    relu_a_prime: Array2<f64>,
}

impl Activations {
    pub fn new(pair: &TwoLayerPair, xs: &Array2<f64>) -> Self {
        let a = xs.dot(&pair.u.t()).as_standard_layout().into_owned();
        let a_prime = xs.dot(&pair.u_prime.t()).as_standard_layout().into_owned();
        Activations {
            relu_a: a.mapv(|x| x.max(0.0)),
            relu_a_prime: a_prime.mapv(|x| x.max(0.0)),
            a,
            a_prime,
        }
    }

    fn rows(m: &Array2<f64>) -> std::slice::ChunksExact<'_, f64> {
        let h = m.ncols();
        m.as_slice().expect("standard layout").chunks_exact(h.max(1))
    }

    #[inline]
    fn g(&self, alpha: f64, r: usize, i: usize) -> f64 {
        let (a, ap) = (self.a[[r, i]], self.a_prime[[r, i]]);
        if alpha == 1.0 {
            a
        } else if alpha == 0.0 {
            ap
        } else {
            ap + alpha * (a - ap)
        }
    }

    /// Sum and sum of squares of `z_x(alpha)` over the samples, `g` being the
    /// interpolated pre-activation.
    #[inline]
    fn z_moments(&self, v: &[f64], vp: &[f64], alpha: f64, g: impl Fn(f64, f64) -> f64) -> (f64, f64) {
        let beta = 1.0 - alpha;
        let rows = Self::rows(&self.a)
            .zip(Self::rows(&self.a_prime))
            .zip(Self::rows(&self.relu_a).zip(Self::rows(&self.relu_a_prime)));
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for ((a, ap), (ra, rap)) in rows {
            let mut zx = 0.0;
            let pre = a.iter().zip(ap).zip(ra.iter().zip(rap));
            for (((&a, &ap), (&ra, &rap)), (&vi, &vpi)) in pre.zip(v.iter().zip(vp)) {
                let rg = g(a, ap).max(0.0);
                zx += alpha * vi * (rg - ra) + beta * vpi * (rg - rap);
            }
            sum += zx;
            sum_sq += zx * zx;
        }
        (sum, sum_sq)
    }

    /// Mean and standard error of `z_x(alpha)` over the samples.
    ///
    /// Written as `a v^T (relu(g) - relu(Ux)) + (1-a) v'^T (relu(g) - relu(U'x))`
    /// so that each sample is exactly 0 at both endpoints and when `U = U'`.
    pub fn z(&self, pair: &TwoLayerPair, alpha: f64) -> (f64, f64) {
        let n = self.a.nrows();
        let (v, vp) = (pair.v.as_slice().expect("contiguous"), pair.v_prime.as_slice().expect("contiguous"));
        let (sum, sum_sq) = if alpha == 1.0 {
            self.z_moments(v, vp, alpha, |a, _| a)
        } else if alpha == 0.0 {
            self.z_moments(v, vp, alpha, |_, ap| ap)
        } else {
            self.z_moments(v, vp, alpha, |a, ap| ap + alpha * (a - ap))
        };
        let mean = sum / n as f64;
        let var = if n > 1 {
            ((sum_sq - n as f64 * mean * mean) / (n - 1) as f64).max(0.0)
        } else {
            0.0
        };
        (mean, (var / n as f64).sqrt())
    }

    /// Sample mean of the exact first derivative
    /// `(v - v')^T relu(g) + v_a^T (relu'(g) * (U - U')x) - v^T relu(Ux) + v'^T relu(U'x)`.
    pub fn analytic_d1(&self, pair: &TwoLayerPair, alpha: f64) -> f64 {
        let (n, h) = self.a.dim();
        let mut sum = 0.0;
        for r in 0..n {
            for i in 0..h {
                let (a, ap) = (self.a[[r, i]], self.a_prime[[r, i]]);
                let g = self.g(alpha, r, i);
                let va = alpha * pair.v[i] + (1.0 - alpha) * pair.v_prime[i];
                let step = if g > 0.0 { 1.0 } else { 0.0 };
                sum += (pair.v[i] - pair.v_prime[i]) * g.max(0.0) + va * step * (a - ap) - pair.v[i] * a.max(0.0)
                    + pair.v_prime[i] * ap.max(0.0);
            }
        }
        sum / n as f64
    }

    /// Whether any pre-activation changes sign on `[lo, hi]` or lies within `tol` of 0 there.
    pub fn kink_between(&self, lo: f64, hi: f64, tol: f64) -> bool {
        let (n, h) = self.a.dim();
        (0..n).any(|r| {
            (0..h).any(|i| {
                let (g0, g1) = (self.g(lo, r, i), self.g(hi, r, i));
                g0.abs() < tol || g1.abs() < tol || (g0 > 0.0) != (g1 > 0.0)
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZProfile {
    pub alphas: Vec<f64>,
    pub z: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Central differences (one-sided at the ends).
    pub d1: Vec<f64>,
    /// Second differences at interior points (`alphas[1..n-1]`).
    pub d2: Vec<f64>,
}

impl ZProfile {
    pub fn max_abs_z(&self) -> f64 {
        max_abs(&self.z)
    }
    pub fn max_abs_d1(&self) -> f64 {
        max_abs(&self.d1)
    }
    pub fn max_abs_d2(&self) -> f64 {
        max_abs(&self.d2)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Estimates `z` on `alphas` from `cfg.n_x` ball samples drawn from `seed`.
pub fn z_profile(pair: &TwoLayerPair, cfg: &TheoryConfig, alphas: &[f64], seed: u64) -> Result<ZProfile> {
    if alphas.len() < 3 {
        return Err(Error::config("z profile needs at least 3 alpha points"));
    }
    if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) || alphas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("alpha grid must be increasing within [0, 1]"));
    }
    let xs = sample_ball(cfg.n_x, cfg.d, cfg.b, seed);
    let acts = Activations::new(pair, &xs);
    let (z, std_err): (Vec<f64>, Vec<f64>) = alphas.iter().map(|&a| acts.z(pair, a)).unzip();
    let n = alphas.len();
    let d1 = (0..n)
        .map(|k| {
            let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
            (z[hi] - z[lo]) / (alphas[hi] - alphas[lo])
        })
        .collect();
    let d2 = (1..n - 1)
        .map(|k| {
            let (hl, hr) = (alphas[k] - alphas[k - 1], alphas[k + 1] - alphas[k]);
            2.0 * (hl * z[k + 1] - (hl + hr) * z[k] + hr * z[k - 1]) / (hl * hr * (hl + hr))
        })
        .collect();
    Ok(ZProfile {
        alphas: alphas.to_vec(),
        z,
        std_err,
        d1,
        d2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremBounds {
    pub b_z: f64,
    pub b_d1: f64,
    pub b_d2: f64,
}

/// Right-hand sides of the three bounds (natural logarithm).
pub fn theorem_bounds(cfg: &TheoryConfig) -> TheoremBounds {
    let h = cfg.h as f64;
    let base = cfg.b * cfg.sigma_v * cfg.sigma_u * h.sqrt();
    let ln = |c: f64| (c * h / cfg.delta).ln();
    let s = |rho: f64| (1.0 - rho).max(0.0).sqrt();
    TheoremBounds {
        b_z: 2f64.sqrt() * base * ln(8.0) * s(cfg.rho_u),
        b_d1: 4.0 * 2f64.sqrt() * base * ln(24.0) * (s(cfg.rho_v) + s(cfg.rho_u)),
        b_d2: 8.0 * base * ln(4.0) * s(cfg.rho_u.max(cfg.rho_v)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMaxima {
    pub max_abs_z: f64,
    pub max_abs_d1: f64,
    pub max_abs_d2: f64,
    /// Largest standard error of the `z` estimate over the grid.
    pub max_std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub rho_u: Vec<f64>,
    pub mean_max_abs_z: Vec<f64>,
    pub trials_per_point: usize,
    pub spearman: f64,
    /// Mean maximum never increases along the sweep.
    pub non_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub config: TheoryConfig,
    pub trials: usize,
    pub base_seed: u64,
    pub bounds: TheoremBounds,
    pub per_trial: Vec<TrialMaxima>,
    pub violation_rate_z: f64,
    pub violation_rate_d1: f64,
    pub violation_rate_d2: f64,
    /// Fraction of trials violating at least one bound.
    pub joint_violation_rate: f64,
    pub monotonicity: TrendReport,
}

/// Trend sweep values of `rho_U`.
pub const TREND_RHOS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Minimum number of trials accepted by [`bound_check`].
pub const MIN_TRIALS: usize = 50;

fn run_trial(cfg: &TheoryConfig, alphas: &[f64], trial_seed: u64) -> Result<TrialMaxima> {
    let pair = sample_pair(cfg, trial_seed)?;
    let p = z_profile(&pair, cfg, alphas, seed::derive(trial_seed, 1))?;
    Ok(TrialMaxima {
        max_abs_z: p.max_abs_z(),
        max_abs_d1: p.max_abs_d1(),
        max_abs_d2: p.max_abs_d2(),
        max_std_err: p.std_err.iter().fold(0.0, |m, &s| m.max(s)),
    })
}

/// Runs `trials` independent trials (seeded by `(base_seed, trial)`) and the
/// `rho_U` trend sweep. Trials run as a parallel map; results are ordered by
/// trial index and independent of the thread count.
pub fn bound_check(cfg: &TheoryConfig, trials: usize, base_seed: u64) -> Result<BoundCheckReport> {
    cfg.validate()?;
    if trials < MIN_TRIALS {
        return Err(Error::config(format!("bound check needs at least {MIN_TRIALS} trials, got {trials}")));
    }
    let alphas = alpha_grid(cfg.alpha_grid_size)?;
    let bounds = theorem_bounds(cfg);
    let per_trial: Vec<TrialMaxima> = (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(cfg, &alphas, seed::derive(base_seed, t)))
        .collect::<Result<_>>()?;
    let rate = |f: &dyn Fn(&TrialMaxima) -> bool| per_trial.iter().filter(|m| f(m)).count() as f64 / trials as f64;
    let vz = |m: &TrialMaxima| m.max_abs_z > bounds.b_z;
    let vd1 = |m: &TrialMaxima| m.max_abs_d1 > bounds.b_d1;
    let vd2 = |m: &TrialMaxima| m.max_abs_d2 > bounds.b_d2;

    let trend_base = seed::derive(base_seed, u64::MAX);
    let trend_trials = cfg.trend_trials.max(1);
    let mut mean_max = Vec::with_capacity(TREND_RHOS.len());
    for (k, &rho_u) in TREND_RHOS.iter().enumerate() {
        let c = TheoryConfig { rho_u, ..*cfg };
        let maxima: Vec<f64> = (0..trend_trials as u64)
            .into_par_iter()
            .map(|t| run_trial(&c, &alphas, seed::derive2(trend_base, k as u64, t)).map(|m| m.max_abs_z))
            .collect::<Result<_>>()?;
        mean_max.push(maxima.iter().sum::<f64>() / maxima.len() as f64);
    }
    let monotonicity = TrendReport {
        rho_u: TREND_RHOS.to_vec(),
        spearman: spearman(&TREND_RHOS, &mean_max),
        non_increasing: mean_max.windows(2).all(|w| w[1] <= w[0]),
        mean_max_abs_z: mean_max,
        trials_per_point: trend_trials,
    };
    Ok(BoundCheckReport {
        config: *cfg,
        trials,
        base_seed,
        bounds,
        violation_rate_z: rate(&vz),
        violation_rate_d1: rate(&vd1),
        violation_rate_d2: rate(&vd2),
        joint_violation_rate: rate(&|m| vz(m) || vd1(m) || vd2(m)),
        per_trial,
        monotonicity,
    })
}

/// Average ranks (ties share the mean rank), 1-based.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    if sx == 0.0 || sy == 0.0 {
        0.0
    } else {
        cov / (sx * sy)
    }
}
