//! Linear interpolation between parameter vectors, barrier metrics, model
//! fusion and two-dimensional loss-landscape slices.
//!
//! Interpolation follows the convention `alpha * w1 + (1 - alpha) * w2`, so
//! `alpha = 1` is `w1` and `alpha = 0` is `w2`.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nn::{evaluate, Dataset, LayeredNetwork, LossKind, Metrics, NetworkSpec, ParamVector};
use crate::{Error, Real, Result};

/// Default number of grid points on `[0, 1]`.
pub const DEFAULT_GRID: usize = 25;

fn check_same_len<F>(a: &[F], b: &[F]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dimension(format!("parameter vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// `alpha * w1 + (1 - alpha) * w2`, returning the endpoints exactly at 1 and 0
/// and shared coordinates unchanged.
pub fn interpolate<F: Real>(w1: &ParamVector<F>, w2: &ParamVector<F>, alpha: f64) -> Result<ParamVector<F>> {
    check_same_len(w1, w2)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(w1.clone());
    }
    if alpha == 0.0 {
        return Ok(w2.clone());
    }
    let beta = 1.0 - alpha;
    Ok(ParamVector(
        w1.iter()
            .zip(w2.iter())
            .map(|(&a, &b)| if a == b { a } else { F::of(alpha * a.as_f64() + beta * b.as_f64()) })
            .collect(),
    ))
}

/// Uniform grid `i / (n - 1)`, `i = 0..n`, with exact endpoints.
pub fn alpha_grid(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::config(format!("alpha grid needs at least 2 points, got {n}")));
    }
    Ok((0..n)
        .map(|i| if i == n - 1 { 1.0 } else { i as f64 / (n - 1) as f64 })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationProfile {
    pub alphas: Vec<f64>,
    pub loss_interp: Vec<f64>,
    /// `alpha * L(w1) + (1 - alpha) * L(w2)`
    pub loss_mix: Vec<f64>,
    pub acc_interp: Option<Vec<f64>>,
    pub acc_mix: Option<Vec<f64>>,
    /// Metrics of `w1` (`alpha = 1`).
    pub endpoint1: Metrics,
    /// Metrics of `w2` (`alpha = 0`).
    pub endpoint2: Metrics,
    /// Metrics of the midpoint `alpha = 0.5`, reported separately.
    pub midpoint: Metrics,
}

fn eval_at<F: Real>(
    spec: &NetworkSpec,
    w1: &ParamVector<F>,
    w2: &ParamVector<F>,
    alpha: f64,
    data: &Dataset<F>,
    loss: LossKind,
) -> Result<Metrics> {
    let w = interpolate(w1, w2, alpha)?;
    let net = LayeredNetwork::from_params(spec, w)?;
    evaluate(&net, data, loss).map_err(|e| Error::AtAlpha {
        alpha,
        source: Box::new(e),
    })
}

/// Evaluates the interpolation path on a `grid_size`-point grid.
///
/// Grid points are evaluated as a parallel map; results are ordered by alpha
/// and do not depend on the number of threads.
pub fn sweep<F: Real>(
    spec: &NetworkSpec,
    w1: &ParamVector<F>,
    w2: &ParamVector<F>,
    data: &Dataset<F>,
    grid_size: usize,
    loss: LossKind,
) -> Result<InterpolationProfile> {
    check_same_len(w1, w2)?;
    if w1.len() != spec.param_count() {
        return Err(Error::dimension(format!(
            "parameter vectors of length {} for a spec with {} parameters",
            w1.len(),
            spec.param_count()
        )));
    }
    let alphas = alpha_grid(grid_size)?;
    let mut points = alphas.clone();
    let has_mid = alphas.contains(&0.5);
    if !has_mid {
        points.push(0.5);
    }
    let metrics: Vec<Metrics> = points
        .par_iter()
        .map(|&a| eval_at(spec, w1, w2, a, data, loss))
        .collect::<Result<_>>()?;
    let midpoint = if has_mid {
        metrics[alphas.iter().position(|&a| a == 0.5).expect("present")]
    } else {
        metrics[alphas.len()]
    };
    let metrics = &metrics[..alphas.len()];
    let endpoint2 = metrics[0];
    let endpoint1 = metrics[alphas.len() - 1];

    let loss_interp = metrics.iter().map(|m| m.loss).collect();
    let loss_mix = alphas.iter().map(|&a| mix(a, endpoint1.loss, endpoint2.loss)).collect();
    let (acc_interp, acc_mix) = match (endpoint1.accuracy, endpoint2.accuracy) {
        (Some(a1), Some(a2)) => (
            Some(metrics.iter().map(|m| m.accuracy.unwrap_or(f64::NAN)).collect()),
            Some(alphas.iter().map(|&a| mix(a, a1, a2)).collect()),
        ),
        _ => (None, None),
    };
    Ok(InterpolationProfile {
        alphas,
        loss_interp,
        loss_mix,
        acc_interp,
        acc_mix,
        endpoint1,
        endpoint2,
        midpoint,
    })
}

/// `alpha * m1 + (1 - alpha) * m2`, exact at the endpoints and for equal values.
fn mix(alpha: f64, m1: f64, m2: f64) -> f64 {
    if alpha == 1.0 || m1 == m2 {
        m1
    } else if alpha == 0.0 {
        m2
    } else {
        alpha * m1 + (1.0 - alpha) * m2
    }
}

/// Maximum over the grid of `loss_interp - loss_mix`, with its alpha.
///
/// May be negative; it is not clamped.
pub fn loss_barrier(profile: &InterpolationProfile) -> (f64, f64) {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for (i, &a) in profile.alphas.iter().enumerate() {
        let gap = profile.loss_interp[i] - profile.loss_mix[i];
        if gap > best.0 {
            best = (gap, a);
        }
    }
    best
}

/// Maximum over the grid of `1 - acc_interp / acc_mix`, with its alpha.
pub fn acc_barrier(profile: &InterpolationProfile) -> Result<(f64, f64)> {
    let (interp, mix) = match (&profile.acc_interp, &profile.acc_mix) {
        (Some(i), Some(m)) => (i, m),
        _ => return Err(Error::config("accuracy barrier requires a classification profile")),
    };
    let mut best = (f64::NEG_INFINITY, 0.0);
    for (i, &a) in profile.alphas.iter().enumerate() {
        if mix[i] <= 0.0 {
            return Err(Error::DegenerateEndpoint { alpha: a });
        }
        let drop = 1.0 - interp[i] / mix[i];
        if drop > best.0 {
            best = (drop, a);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierReport {
    pub loss_barrier: f64,
    pub loss_argmax_alpha: f64,
    pub acc_barrier: Option<f64>,
    pub acc_argmax_alpha: Option<f64>,
    pub grid_size: usize,
    /// Accuracy of the `alpha = 0.5` interpolant.
    pub interp_acc_mid: Option<f64>,
    pub interp_loss_mid: f64,
}

pub fn barrier_report(profile: &InterpolationProfile) -> Result<BarrierReport> {
    let (loss_barrier, loss_argmax_alpha) = loss_barrier(profile);
    let acc = if profile.acc_interp.is_some() {
        Some(acc_barrier(profile)?)
    } else {
        None
    };
    Ok(BarrierReport {
        loss_barrier,
        loss_argmax_alpha,
        acc_barrier: acc.map(|a| a.0),
        acc_argmax_alpha: acc.map(|a| a.1),
        grid_size: profile.alphas.len(),
        interp_acc_mid: profile.midpoint.accuracy,
        interp_loss_mid: profile.midpoint.loss,
    })
}

/// CSV with columns `alpha, loss_interp, loss_mix, acc_interp, acc_mix`
/// (accuracy cells empty for regression).
pub fn profile_csv(profile: &InterpolationProfile) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["alpha", "loss_interp", "loss_mix", "acc_interp", "acc_mix"])
        .expect("in-memory write");
    for i in 0..profile.alphas.len() {
        let acc = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
        w.write_record([
            profile.alphas[i].to_string(),
            profile.loss_interp[i].to_string(),
            profile.loss_mix[i].to_string(),
            acc(&profile.acc_interp),
            acc(&profile.acc_mix),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Weighted element-wise average accumulated in `f64`.
///
/// Coordinates on which every input agrees keep that value bit-exactly, so
/// averaging identical vectors (or identical frozen entries) is lossless.
pub fn weighted_average<F: Real>(models: &[&[F]], weights: &[f64]) -> Result<ParamVector<F>> {
    let first = models.first().ok_or_else(|| Error::config("nothing to average"))?;
    if weights.len() != models.len() {
        return Err(Error::config(format!("{} weights for {} models", weights.len(), models.len())));
    }
    for m in models {
        check_same_len(first, m)?;
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::config("fusion weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("fusion weights sum to {total}, expected 1")));
    }
    let out = (0..first.len())
        .map(|k| {
            let v0 = first[k];
            if models.iter().all(|m| m[k].as_f64().to_bits() == v0.as_f64().to_bits()) {
                return v0;
            }
            let mut acc = 0.0;
            for (m, &w) in models.iter().zip(weights) {
                acc += w * m[k].as_f64();
            }
            F::of(acc)
        })
        .collect();
    Ok(ParamVector(out))
}

/// Weighted fusion of at least two models; uniform weights by default.
pub fn multi_fuse<F: Real>(models: &[ParamVector<F>], weights: Option<&[f64]>) -> Result<ParamVector<F>> {
    if models.len() < 2 {
        return Err(Error::config(format!("fusion needs at least 2 models, got {}", models.len())));
    }
    let uniform;
    let weights = match weights {
        Some(w) => w,
        None => {
            uniform = vec![1.0 / models.len() as f64; models.len()];
            &uniform
        }
    };
    let views: Vec<&[F]> = models.iter().map(|m| m.values()).collect();
    weighted_average(&views, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneExtents {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub origin: ParamVector<f64>,
    pub u: ParamVector<f64>,
    pub v: ParamVector<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `loss[[i, j]]` is the loss at `origin + xs[i] * u + ys[j] * v`.
    pub loss: Array2<f64>,
    /// Plane coordinates of `w_a` and `w_b`.
    pub coords_a: (f64, f64),
    pub coords_b: (f64, f64),
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss on the plane through `origin`, `w_a` and `w_b`.
///
/// The basis is Gram-Schmidt on `(w_a - origin, w_b - origin)`. Without
/// explicit extents the grid covers the three points with a 20% margin.
pub fn plane_slice<F: Real>(
    spec: &NetworkSpec,
    origin: &ParamVector<F>,
    w_a: &ParamVector<F>,
    w_b: &ParamVector<F>,
    data: &Dataset<F>,
    resolution: usize,
    extents: Option<PlaneExtents>,
    loss: LossKind,
) -> Result<LandscapeGrid> {
    check_same_len(origin, w_a)?;
    check_same_len(origin, w_b)?;
    if resolution == 0 {
        return Err(Error::config("plane resolution must be at least 1"));
    }
    let o: Vec<f64> = origin.iter().map(|v| v.as_f64()).collect();
    let da: Vec<f64> = w_a.iter().zip(&o).map(|(a, o)| a.as_f64() - o).collect();
    let db: Vec<f64> = w_b.iter().zip(&o).map(|(b, o)| b.as_f64() - o).collect();
    let na = dot(&da, &da).sqrt();
    let nb = dot(&db, &db).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateBasis);
    }
    let u: Vec<f64> = da.iter().map(|x| x / na).collect();
    let proj = dot(&db, &u);
    let mut v: Vec<f64> = db.iter().zip(&u).map(|(b, u)| b - proj * u).collect();
    let nv = dot(&v, &v).sqrt();
    if nv <= 1e-10 * nb {
        return Err(Error::DegenerateBasis);
    }
    v.iter_mut().for_each(|x| *x /= nv);

    let coords_a = (na, 0.0);
    let coords_b = (proj, dot(&db, &v));
    let ext = extents.unwrap_or_else(|| {
        let xlo = 0.0f64.min(coords_b.0);
        let xhi = na.max(coords_b.0);
        let ylo = 0.0f64.min(coords_b.1);
        let yhi = 0.0f64.max(coords_b.1);
        let m = 0.2 * (xhi - xlo).max(yhi - ylo);
        PlaneExtents {
            x: (xlo - m, xhi + m),
            y: (ylo - m, yhi + m),
        }
    });
    let xs = linspace(ext.x.0, ext.x.1, resolution);
    let ys = linspace(ext.y.0, ext.y.1, resolution);
    let cells: Vec<(usize, usize)> = (0..resolution).flat_map(|i| (0..resolution).map(move |j| (i, j))).collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let (x, y) = (xs[i], ys[j]);
            let w: Vec<F> = (0..o.len()).map(|k| F::of(o[k] + x * u[k] + y * v[k])).collect();
            let net = LayeredNetwork::from_params(spec, ParamVector(w))?;
            Ok(evaluate(&net, data, loss)?.loss)
        })
        .collect::<Result<_>>()?;
    Ok(LandscapeGrid {
        origin: ParamVector(o),
        u: ParamVector(u),
        v: ParamVector(v),
        xs,
        ys,
        loss: Array2::from_shape_vec((resolution, resolution), values).expect("resolution^2 cells"),
        coords_a,
        coords_b,
    })
}

/// CSV with columns `x, y, loss`.
pub fn landscape_csv(grid: &LandscapeGrid) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "loss"]).expect("in-memory write");
    for (i, x) in grid.xs.iter().enumerate() {
        for (j, y) in grid.ys.iter().enumerate() {
            w.write_record([x.to_string(), y.to_string(), grid.loss[[i, j]].to_string()])
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::nn::{build_network, OutputHead};

    fn profile(loss_interp: Vec<f64>, acc: Option<(Vec<f64>, f64, f64)>) -> InterpolationProfile {
        let n = loss_interp.len();
        let alphas = alpha_grid(n).unwrap();
        let (l2, l1) = (loss_interp[0], loss_interp[n - 1]);
        let loss_mix = alphas.iter().map(|&a| mix(a, l1, l2)).collect();
        let (acc_interp, acc_mix, a1, a2) = match acc {
            Some((ai, a1, a2)) => {
                let mix = alphas.iter().map(|a| a * a1 + (1.0 - a) * a2).collect();
                (Some(ai), Some(mix), Some(a1), Some(a2))
            }
            None => (None, None, None, None),
        };
        let m = |loss, accuracy| Metrics { loss, accuracy };
        InterpolationProfile {
            alphas,
            loss_interp,
            loss_mix,
            acc_interp,
            acc_mix,
            endpoint1: m(l1, a1),
            endpoint2: m(l2, a2),
            midpoint: m(0.0, None),
        }
    }

    #[test]
    fn interpolate_examples() {
        let w1 = ParamVector(vec![2.0f64]);
        let w2 = ParamVector(vec![4.0]);
        assert_eq!(interpolate(&w1, &w2, 0.5).unwrap().0, vec![3.0]);
        assert_eq!(interpolate(&w1, &w2, 1.0).unwrap(), w1);
        assert_eq!(interpolate(&w1, &w2, 0.0).unwrap(), w2);
        assert!(interpolate(&w1, &ParamVector(vec![1.0, 2.0]), 0.5).is_err());
    }

    #[test]
    fn loss_barrier_triangle() {
        let (b, a) = loss_barrier(&profile(vec![1.0, 1.5, 1.0], None));
        assert_eq!(b, 0.5);
        assert_eq!(a, 0.5);
        assert_eq!(loss_barrier(&profile(vec![2.0; 5], None)).0, 0.0);
    }

    #[test]
    fn loss_barrier_can_be_negative() {
        let (b, _) = loss_barrier(&profile(vec![1.0, 0.2, 1.0], None));
        assert_eq!(b, 0.0);
        let (b, _) = loss_barrier(&profile(vec![1.0, 0.2, 0.1, 0.2, 1.0], None));
        assert_eq!(b, 0.0);
        let mut p = profile(vec![1.0, 0.5, 1.0], None);
        p.loss_interp[0] = 0.9;
        p.loss_interp[2] = 0.9;
        assert!(loss_barrier(&p).0 < 0.0);
    }

    #[test]
    fn acc_barrier_examples() {
        let (b, _) = acc_barrier(&profile(vec![0.0; 3], Some((vec![0.644, 0.528, 0.644], 0.644, 0.644)))).unwrap();
        assert!((b - 0.180).abs() < 1e-3, "{b}");
        let (b, _) = acc_barrier(&profile(vec![0.0; 3], Some((vec![0.9, 0.8, 0.7], 0.7, 0.9)))).unwrap();
        assert!(b.abs() < 1e-12);
        let (b, _) = acc_barrier(&profile(vec![0.0; 3], Some((vec![0.9, 0.0, 0.9], 0.9, 0.9)))).unwrap();
        assert_eq!(b, 1.0);
        let err = acc_barrier(&profile(vec![0.0; 3], Some((vec![0.0, 0.0, 0.0], 0.0, 0.0)))).unwrap_err();
        assert!(matches!(err, Error::DegenerateEndpoint { .. }));
    }

    #[test]
    fn fuse_examples() {
        let w = ParamVector(vec![0.1f64, -3.7, 1e-9]);
        assert!(multi_fuse(&[w.clone(), w.clone(), w.clone()], None).unwrap().bit_eq(&w));
        let out = multi_fuse(&[ParamVector(vec![0.0f64]), ParamVector(vec![2.0])], None).unwrap();
        assert_eq!(out.0, vec![1.0]);
        assert!(matches!(
            multi_fuse(&[w.clone(), w.clone()], Some(&[0.5, 0.6])),
            Err(Error::Config(_))
        ));
        assert!(multi_fuse(&[w.clone()], None).is_err());
    }

    #[test]
    fn sweep_identical_endpoints() {
        let spec = NetworkSpec::new(vec![2, 6, 3], OutputHead::SoftmaxCeLogits, 4).unwrap();
        let net = build_network::<f64>(&spec).unwrap();
        let data = gen_blobs(3, 10, 2, 3.0, 1).unwrap();
        let p = sweep(&spec, net.params(), net.params(), &data, 5, LossKind::SoftmaxCe).unwrap();
        assert!(p.loss_interp.windows(2).all(|w| w[0] == w[1]));
        let r = barrier_report(&p).unwrap();
        assert!(r.loss_barrier.abs() < 1e-12);
        assert!(r.acc_barrier.unwrap().abs() < 1e-12);
    }

    #[test]
    fn sweep_three_points_and_endpoints() {
        let spec = NetworkSpec::new(vec![2, 6, 3], OutputHead::SoftmaxCeLogits, 4).unwrap();
        let a = build_network::<f64>(&spec).unwrap();
        let b = build_network::<f64>(&NetworkSpec { seed: 5, ..spec.clone() }).unwrap();
        let data = gen_blobs(3, 10, 2, 3.0, 1).unwrap();
        let p = sweep(&spec, a.params(), b.params(), &data, 3, LossKind::SoftmaxCe).unwrap();
        assert_eq!(p.alphas, vec![0.0, 0.5, 1.0]);
        for (i, &alpha) in p.alphas.iter().enumerate() {
            let w = interpolate(a.params(), b.params(), alpha).unwrap();
            let m = evaluate(&LayeredNetwork::from_params(&spec, w).unwrap(), &data, LossKind::SoftmaxCe).unwrap();
            assert_eq!(m.loss.to_bits(), p.loss_interp[i].to_bits());
        }
        assert_eq!(p.endpoint1, evaluate(&a, &data, LossKind::SoftmaxCe).unwrap());
        assert_eq!(p.endpoint2, evaluate(&b, &data, LossKind::SoftmaxCe).unwrap());
        let csv = profile_csv(&p);
        assert!(csv.starts_with("alpha,loss_interp,loss_mix,acc_interp,acc_mix\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn plane_contains_origin_and_rejects_collinear() {
        let spec = NetworkSpec::new(vec![2, 4, 1], OutputHead::Linear, 1).unwrap();
        let data = crate::data::gen_polynomial(crate::data::PolyKind::Poly2, 20, 0.0, 0).unwrap();
        let data = Dataset::new(
            ndarray::concatenate![ndarray::Axis(1), data.inputs().view(), data.inputs().view()],
            data.targets().clone(),
        )
        .unwrap();
        let o = build_network::<f64>(&spec).unwrap();
        let a = build_network::<f64>(&NetworkSpec { seed: 2, ..spec.clone() }).unwrap();
        let b = build_network::<f64>(&NetworkSpec { seed: 3, ..spec.clone() }).unwrap();
        let ext = PlaneExtents { x: (-1.0, 1.0), y: (-1.0, 1.0) };
        let g = plane_slice(&spec, o.params(), a.params(), b.params(), &data, 5, Some(ext), LossKind::Mse).unwrap();
        assert_eq!(g.xs[2], 0.0);
        let direct = evaluate(&o, &data, LossKind::Mse).unwrap().loss;
        assert_eq!(g.loss[[2, 2]], direct);
        assert!(dot(&g.u, &g.v).abs() < 1e-12);

        let mut collinear = a.params().clone();
        for (c, (x, y)) in collinear.iter_mut().zip(a.params().iter().zip(o.params().iter())) {
            *c = y + 2.0 * (x - y);
        }
        let err = plane_slice(&spec, o.params(), a.params(), &collinear, &data, 3, None, LossKind::Mse);
        assert!(matches!(err, Err(Error::DegenerateBasis)));
    }
}
