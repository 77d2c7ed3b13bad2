#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use nalign::nn::{Dataset, LayeredNetwork, LossKind, NetworkSpec, OutputHead, ParamVector, Targets};
use nalign::seed;

/// Widths used by gradient and permutation property suites.
pub const ARCH_GRID: &[&[usize]] = &[
    &[3, 2],
    &[4, 6, 3],
    &[5, 8, 8, 2],
    &[6, 7, 5, 9, 4],
    &[10, 16, 16, 16, 16, 16, 10],
];

pub fn specs(head: OutputHead, seed: u64) -> Vec<NetworkSpec> {
    ARCH_GRID
        .iter()
        .enumerate()
        .map(|(k, w)| NetworkSpec::new(w.to_vec(), head, seed + k as u64).unwrap())
        .collect()
}

/// Plain-loop forward pass. Also returns the ReLU on/off pattern of every hidden unit.
pub fn oracle_forward(net: &LayeredNetwork<f64>, x: &Array2<f64>) -> (Array2<f64>, Vec<bool>) {
    let layers = net.num_layers();
    let mut out = Array2::zeros((x.nrows(), net.spec().output_dim()));
    let mut pattern = Vec::new();
    for r in 0..x.nrows() {
        let mut h: Vec<f64> = x.row(r).to_vec();
        for l in 0..layers {
            let w = net.weight(l);
            let b = net.bias(l);
            let mut next = vec![0.0; w.nrows()];
            for i in 0..w.nrows() {
                let mut s = b[i];
                for j in 0..w.ncols() {
                    s += w[[i, j]] * h[j];
                }
                next[i] = s;
            }
            if l + 1 < layers {
                for v in next.iter_mut() {
                    pattern.push(*v > 0.0);
                    *v = v.max(0.0);
                }
            }
            h = next;
        }
        for (c, v) in h.into_iter().enumerate() {
            out[[r, c]] = v;
        }
    }
    (out, pattern)
}

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = seed::rng(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Random inputs with class or regression targets matching the head of `spec`.
pub fn random_dataset(spec: &NetworkSpec, n: usize, seed: u64) -> Dataset<f64> {
    let x = gaussian(n, spec.input_dim(), seed);
    let out = spec.output_dim();
    let targets = match spec.output_head {
        OutputHead::SoftmaxCeLogits => {
            let mut rng = seed::rng(seed ^ 0xabcd);
            Targets::Classes((0..n).map(|_| rng.random_range(0..out)).collect())
        }
        OutputHead::Linear => Targets::Values(gaussian(n, out, seed ^ 0x1234)),
    };
    Dataset::new(x, targets).unwrap()
}

pub fn loss_at(spec: &NetworkSpec, w: &[f64], data: &Dataset<f64>, loss: LossKind) -> f64 {
    let net = LayeredNetwork::from_params(spec, ParamVector(w.to_vec())).unwrap();
    net.loss_and_grad(data.inputs().view(), data.targets().view(), loss).unwrap().0
}

pub struct FdOutcome {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

/// Central differences (step `eps`) on `coords` random coordinates. Coordinates
/// whose perturbation flips any ReLU are skipped, the loss is not differentiable there.
pub fn fd_check(net: &LayeredNetwork<f64>, data: &Dataset<f64>, eps: f64, coords: usize, seed: u64) -> FdOutcome {
    let spec = net.spec();
    let loss = data.default_loss();
    let (_, grad) = net.loss_and_grad(data.inputs().view(), data.targets().view(), loss).unwrap();
    let (_, base_pattern) = oracle_forward(net, data.inputs());
    let mut rng = seed::rng(seed);
    let d = net.params().len();
    let mut out = FdOutcome { max_rel_err: 0.0, checked: 0, skipped_kinks: 0 };
    for _ in 0..coords {
        let k = rng.random_range(0..d);
        let mut plus = net.params().0.clone();
        let mut minus = net.params().0.clone();
        plus[k] += eps;
        minus[k] -= eps;
        let flips = [&plus, &minus].iter().any(|w| {
            let n = LayeredNetwork::from_params(spec, ParamVector(w.to_vec())).unwrap();
            oracle_forward(&n, data.inputs()).1 != base_pattern
        });
        if flips {
            out.skipped_kinks += 1;
            continue;
        }
        let numeric = (loss_at(spec, &plus, data, loss) - loss_at(spec, &minus, data, loss)) / (2.0 * eps);
        let analytic = grad[k];
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale < 1e-8 { 0.0 } else { (analytic - numeric).abs() / scale };
        out.max_rel_err = out.max_rel_err.max(rel);
        out.checked += 1;
    }
    out
}
