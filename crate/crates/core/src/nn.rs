//! Dense feed-forward ReLU networks.
//!
//! A [`LayeredNetwork`] owns a single flat [`ParamVector`]; per-layer weight
//! matrices and bias vectors are views into it. The canonical layout is
//!
//! ```text
//! [ W_1 (row-major, J_1 x J_0) | b_1 | W_2 (J_2 x J_1) | b_2 | ... | W_L | b_L ]
//! ```
//!
//! so flattening and unflattening are free and two vectors built from the same
//! [`NetworkSpec`] are element-wise comparable. Hidden layers apply ReLU, the
//! output layer is linear (logits for classification).

use std::ops::{Deref, DerefMut, Range};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mask::GradientMask;
use crate::{seed, Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// Raw linear outputs (regression).
    Linear,
    /// Linear logits consumed by a softmax cross-entropy loss.
    #[default]
    SoftmaxCeLogits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Kaiming-uniform with negative slope sqrt(5): `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, zero biases.
    #[default]
    KaimingUniform,
    /// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))` weights, zero biases.
    HeUniform,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases alike.
    FanInUniform,
}

/// Architecture and initialization of a network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// `J_0..J_L`, input through output.
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub output_head: OutputHead,
    #[serde(default)]
    pub init: InitScheme,
    pub seed: u64,
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    /// `J_l`
    pub rows: usize,
    /// `J_{l-1}`
    pub cols: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerLayout {
    pub fn weight_range(&self) -> Range<usize> {
        self.weight_offset..self.weight_offset + self.rows * self.cols
    }

    pub fn bias_range(&self) -> Range<usize> {
        self.bias_offset..self.bias_offset + self.rows
    }

    /// Weights and biases of the layer, which are contiguous.
    pub fn param_range(&self) -> Range<usize> {
        self.weight_offset..self.bias_offset + self.rows
    }

    pub fn num_params(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

impl NetworkSpec {
    pub fn new(layer_widths: Vec<usize>, output_head: OutputHead, seed: u64) -> Result<Self> {
        let spec = NetworkSpec {
            layer_widths,
            activation: Activation::Relu,
            output_head,
            init: InitScheme::KaimingUniform,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Classifier MLP with `hidden_layers` layers of `width` neurons (`MLP_h{hidden}_w{width}`).
    pub fn mlp(input: usize, hidden_layers: usize, width: usize, output: usize, seed: u64) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat(width).take(hidden_layers));
        widths.push(output);
        Self::new(widths, OutputHead::SoftmaxCeLogits, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::config(format!(
                "network needs at least input and output widths, got {:?}",
                self.layer_widths
            )));
        }
        if let Some(pos) = self.layer_widths.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("layer width at position {pos} is zero")));
        }
        Ok(())
    }

    /// Number of parameterized layers `L`.
    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    /// Widths of the hidden layers `J_1..J_{L-1}`.
    pub fn hidden_widths(&self) -> &[usize] {
        &self.layer_widths[1..self.layer_widths.len() - 1]
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let layer = LayerLayout {
                    rows,
                    cols,
                    weight_offset: offset,
                    bias_offset: offset + rows * cols,
                };
                offset += rows * cols + rows;
                layer
            })
            .collect()
    }

    /// `d = sum_l (J_l * J_{l-1} + J_l)`.
    pub fn param_count(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Hash of the parameter layout (widths only, not the seed).
    pub fn layout_fingerprint(&self) -> u64 {
        let mut hasher = Sha256::new();
        for w in &self.layer_widths {
            hasher.update((*w as u64).to_le_bytes());
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    pub fn default_loss(&self) -> LossKind {
        match self.output_head {
            OutputHead::Linear => LossKind::Mse,
            OutputHead::SoftmaxCeLogits => LossKind::SoftmaxCe,
        }
    }
}

/// Flat parameter vector in canonical layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector<F>(pub Vec<F>);

impl<F: Real> ParamVector<F> {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![F::zero(); len])
    }

    pub fn values(&self) -> &[F] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<F> {
        self.0
    }

    pub fn cast<G: Real>(&self) -> ParamVector<G> {
        ParamVector(self.0.iter().map(|&v| G::of(v.as_f64())).collect())
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

impl<F> Deref for ParamVector<F> {
    type Target = [F];
    fn deref(&self) -> &[F] {
        &self.0
    }
}

impl<F> DerefMut for ParamVector<F> {
    fn deref_mut(&mut self) -> &mut [F] {
        &mut self.0
    }
}

impl<F> From<Vec<F>> for ParamVector<F> {
    fn from(v: Vec<F>) -> Self {
        ParamVector(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    SoftmaxCe,
}

/// Supervision targets for a dataset or batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets<F> {
    /// Class indices in `[0, J_L)`.
    Classes(Vec<usize>),
    /// `n x J_L` regression targets.
    Values(Array2<F>),
}

impl<F: Real> Targets<F> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            Targets::Classes(c) => Targets::Classes(rows.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(v.select(Axis(0), rows)),
        }
    }

    fn slice(&self, range: Range<usize>) -> TargetsRef<'_, F> {
        match self {
            Targets::Classes(c) => TargetsRef::Classes(&c[range]),
            Targets::Values(v) => TargetsRef::Values(v.slice(s![range, ..])),
        }
    }

    pub fn view(&self) -> TargetsRef<'_, F> {
        self.slice(0..self.len())
    }
}

/// Borrowed targets of a batch.
#[derive(Debug, Clone, Copy)]
pub enum TargetsRef<'a, F> {
    Classes(&'a [usize]),
    Values(ArrayView2<'a, F>),
}

/// Inputs (`n x J_0`) with matching targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    inputs: Array2<F>,
    targets: Targets<F>,
}

impl<F: Real> Dataset<F> {
    pub fn new(inputs: Array2<F>, targets: Targets<F>) -> Result<Self> {
        if inputs.nrows() != targets.len() {
            return Err(Error::dimension(format!(
                "{} input rows but {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        if let Targets::Values(v) = &targets {
            if v.nrows() > 0 && v.ncols() == 0 {
                return Err(Error::dimension("regression targets have zero columns"));
            }
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn inputs(&self) -> &Array2<F> {
        &self.inputs
    }

    pub fn inputs_mut(&mut self) -> &mut Array2<F> {
        &mut self.inputs
    }

    pub fn targets(&self) -> &Targets<F> {
        &self.targets
    }

    /// Class labels, when this is a classification dataset.
    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(c) => Some(c),
            Targets::Values(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows `rows` (in that order) as a new dataset.
    pub fn select(&self, rows: &[usize]) -> Self {
        Dataset {
            inputs: self.inputs.select(Axis(0), rows),
            targets: self.targets.select(rows),
        }
    }

    /// First `n` rows (or all, if fewer).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let rows: Vec<usize> = (0..n).collect();
        self.select(&rows)
    }

    pub fn cast<G: Real>(&self) -> Dataset<G> {
        Dataset {
            inputs: self.inputs.mapv(|v| G::of(v.as_f64())),
            targets: match &self.targets {
                Targets::Classes(c) => Targets::Classes(c.clone()),
                Targets::Values(v) => Targets::Values(v.mapv(|x| G::of(x.as_f64()))),
            },
        }
    }

    /// Loss matching the target kind.
    pub fn default_loss(&self) -> LossKind {
        match self.targets {
            Targets::Classes(_) => LossKind::SoftmaxCe,
            Targets::Values(_) => LossKind::Mse,
        }
    }

    fn batch(&self, range: Range<usize>) -> (ArrayView2<'_, F>, TargetsRef<'_, F>) {
        (self.inputs.slice(s![range.clone(), ..]), self.targets.slice(range))
    }
}

/// A network with its parameters stored flat in canonical layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredNetwork<F> {
    spec: NetworkSpec,
    layout: Vec<LayerLayout>,
    params: ParamVector<F>,
}

/// Deterministically initialized network for `spec`.
pub fn build_network<F: Real>(spec: &NetworkSpec) -> Result<LayeredNetwork<F>> {
    LayeredNetwork::build(spec)
}

impl<F: Real> LayeredNetwork<F> {
    pub fn build(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let mut params = ParamVector::zeros(spec.param_count());
        let mut rng = seed::rng(spec.seed);
        for layer in &layout {
            let fan_in = layer.cols as f64;
            let bound = match spec.init {
                InitScheme::KaimingUniform | InitScheme::FanInUniform => 1.0 / fan_in.sqrt(),
                InitScheme::HeUniform => (6.0 / fan_in).sqrt(),
            };
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in &mut params[layer.weight_range()] {
                *w = F::of(dist.sample(&mut rng));
            }
            if spec.init == InitScheme::FanInUniform {
                for b in &mut params[layer.bias_range()] {
                    *b = F::of(dist.sample(&mut rng));
                }
            }
        }
        Ok(LayeredNetwork {
            spec: spec.clone(),
            layout,
            params,
        })
    }

    /// Network with explicit parameters (the inverse of [`Self::params`]).
    pub fn from_params(spec: &NetworkSpec, params: ParamVector<F>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::dimension(format!(
                "parameter vector has length {} but spec requires {}",
                params.len(),
                spec.param_count()
            )));
        }
        Ok(LayeredNetwork {
            spec: spec.clone(),
            layout: spec.layout(),
            params,
        })
    }

    /// Same architecture with a replaced parameter vector.
    pub fn with_params(&self, params: ParamVector<F>) -> Result<Self> {
        Self::from_params(&self.spec, params)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub fn params(&self) -> &ParamVector<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector<F> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamVector<F> {
        self.params
    }

    pub fn num_layers(&self) -> usize {
        self.layout.len()
    }

    /// `W_{l+1}` as a `J_{l+1} x J_l` view (layers are 0-indexed here).
    pub fn weight(&self, layer: usize) -> ArrayView2<'_, F> {
        let l = &self.layout[layer];
        ArrayView2::from_shape((l.rows, l.cols), &self.params[l.weight_range()]).expect("layout is consistent")
    }

    pub fn weight_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, F> {
        let l = self.layout[layer];
        ArrayViewMut2::from_shape((l.rows, l.cols), &mut self.params[l.weight_range()])
            .expect("layout is consistent")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, F> {
        ArrayView1::from(&self.params[self.layout[layer].bias_range()])
    }

    pub fn bias_mut(&mut self, layer: usize) -> ArrayViewMut1<'_, F> {
        let range = self.layout[layer].bias_range();
        ArrayViewMut1::from(&mut self.params[range])
    }

    /// Network outputs (`n x J_L`) for `inputs` (`n x J_0`).
    pub fn forward(&self, inputs: ArrayView2<'_, F>) -> Result<Array2<F>> {
        let mut acts = self.forward_cached(inputs)?;
        Ok(acts.pop().expect("at least one layer"))
    }

    /// Post-activation outputs of every layer; the last entry holds the logits.
    fn forward_cached(&self, inputs: ArrayView2<'_, F>) -> Result<Vec<Array2<F>>> {
        if inputs.ncols() != self.spec.input_dim() {
            return Err(Error::dimension(format!(
                "input width {} does not match network input {}",
                inputs.ncols(),
                self.spec.input_dim()
            )));
        }
        let n = inputs.nrows();
        let last = self.num_layers() - 1;
        let mut acts: Vec<Array2<F>> = Vec::with_capacity(self.num_layers());
        for layer in 0..self.num_layers() {
            let w = self.weight(layer);
            let b = self.bias(layer);
            let mut z = Array2::from_shape_fn((n, w.nrows()), |(_, j)| b[j]);
            if layer == 0 {
                general_mat_mul(F::one(), &inputs, &w.t(), F::one(), &mut z);
            } else {
                general_mat_mul(F::one(), &acts[layer - 1], &w.t(), F::one(), &mut z);
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: layer + 1 });
            }
            if layer != last {
                z.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Mean loss over the batch and its gradient in canonical layout.
    pub fn loss_and_grad(
        &self,
        inputs: ArrayView2<'_, F>,
        targets: TargetsRef<'_, F>,
        loss: LossKind,
    ) -> Result<(F, ParamVector<F>)> {
        let mut grad = ParamVector::zeros(self.params.len());
        let stats = self.loss_and_grad_into(inputs, targets, loss, &mut grad)?;
        Ok((F::of(stats.loss_sum / stats.denominator), grad))
    }

    /// Backpropagation writing into a caller-owned gradient buffer.
    fn loss_and_grad_into(
        &self,
        inputs: ArrayView2<'_, F>,
        targets: TargetsRef<'_, F>,
        loss: LossKind,
        grad: &mut [F],
    ) -> Result<BatchStats> {
        let n = inputs.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let acts = self.forward_cached(inputs)?;
        let logits = acts.last().expect("at least one layer");
        let (mut delta, stats) = output_delta(logits.view(), targets, loss)?;

        for layer in (0..self.num_layers()).rev() {
            let l = self.layout[layer];
            {
                let (w_part, b_part) = grad[l.param_range()].split_at_mut(l.rows * l.cols);
                let mut gw = ArrayViewMut2::from_shape((l.rows, l.cols), w_part).expect("layout is consistent");
                if layer == 0 {
                    general_mat_mul(F::one(), &delta.t(), &inputs, F::zero(), &mut gw);
                } else {
                    general_mat_mul(F::one(), &delta.t(), &acts[layer - 1], F::zero(), &mut gw);
                }
                let gb = delta.sum_axis(Axis(0));
                b_part.copy_from_slice(gb.as_slice().expect("contiguous"));
            }
            if layer > 0 {
                let mut next = delta.dot(&self.weight(layer));
                ndarray::Zip::from(&mut next).and(&acts[layer - 1]).for_each(|d, &h| {
                    if h <= F::zero() {
                        *d = F::zero();
                    }
                });
                delta = next;
            }
        }
        Ok(stats)
    }
}

struct BatchStats {
    loss_sum: f64,
    /// Divisor turning `loss_sum` into the mean loss.
    denominator: f64,
    correct: Option<usize>,
}

/// dL/dlogits for the mean loss, plus loss statistics.
fn output_delta<F: Real>(
    logits: ArrayView2<'_, F>,
    targets: TargetsRef<'_, F>,
    loss: LossKind,
) -> Result<(Array2<F>, BatchStats)> {
    let (n, k) = logits.dim();
    match (loss, targets) {
        (LossKind::Mse, TargetsRef::Values(t)) => {
            if t.dim() != (n, k) {
                return Err(Error::dimension(format!("targets {:?} vs outputs {:?}", t.dim(), (n, k))));
            }
            let denom = (n * k) as f64;
            let diff = &logits - &t;
            let loss_sum: f64 = diff.iter().map(|d| d.as_f64() * d.as_f64()).sum();
            let scale = F::of(2.0 / denom);
            Ok((
                diff.mapv(|d| d * scale),
                BatchStats {
                    loss_sum,
                    denominator: denom,
                    correct: None,
                },
            ))
        }
        (LossKind::SoftmaxCe, TargetsRef::Classes(c)) => {
            if c.len() != n {
                return Err(Error::dimension(format!("{} targets for {} rows", c.len(), n)));
            }
            let inv_n = F::of(1.0 / n as f64);
            let mut delta = Array2::zeros((n, k));
            let mut loss_sum = 0.0;
            let mut correct = 0;
            for (i, row) in logits.outer_iter().enumerate() {
                let target = c[i];
                if target >= k {
                    return Err(Error::dimension(format!("class {target} out of range for {k} outputs")));
                }
                let (lse, best) = log_sum_exp_argmax(row);
                loss_sum += lse - row[target].as_f64();
                if best == target {
                    correct += 1;
                }
                let mut drow = delta.row_mut(i);
                for j in 0..k {
                    let p = (row[j].as_f64() - lse).exp();
                    let g = if j == target { p - 1.0 } else { p };
                    drow[j] = F::of(g) * inv_n;
                }
            }
            Ok((
                delta,
                BatchStats {
                    loss_sum,
                    denominator: n as f64,
                    correct: Some(correct),
                },
            ))
        }
        (loss, _) => Err(Error::config(format!("loss {loss:?} does not match the target kind"))),
    }
}

/// `log(sum(exp(row)))` and the first index of the maximum.
fn log_sum_exp_argmax<F: Real>(row: ArrayView1<'_, F>) -> (f64, usize) {
    let best = argmax(row);
    let m = row[best].as_f64();
    let s: f64 = row.iter().map(|v| (v.as_f64() - m).exp()).sum();
    (m + s.ln(), best)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: Real>(row: ArrayView1<'_, F>) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be nonnegative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Momentum buffer and hyperparameters of SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub momentum_buffer: ParamVector<F>,
    pub hyper: SgdConfig,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(len: usize, hyper: SgdConfig) -> Self {
        OptimizerState {
            momentum_buffer: ParamVector::zeros(len),
            hyper,
        }
    }
}

/// One SGD step with coupled L2 weight decay and heavy-ball momentum.
///
/// The mask is applied to the composed update `lr * v`, so coordinates whose
/// mask bit is 0 are left bit-identical even under momentum and weight decay.
pub fn sgd_step<F: Real>(
    net: &mut LayeredNetwork<F>,
    grad: &[F],
    state: &mut OptimizerState<F>,
    mask: Option<&GradientMask>,
) -> Result<()> {
    sgd_update(&mut net.params, grad, state, mask)
}

fn sgd_update<F: Real>(
    w: &mut [F],
    grad: &[F],
    state: &mut OptimizerState<F>,
    mask: Option<&GradientMask>,
) -> Result<()> {
    let d = w.len();
    if grad.len() != d || state.momentum_buffer.len() != d {
        return Err(Error::dimension(format!(
            "parameters {d}, gradient {}, momentum buffer {}",
            grad.len(),
            state.momentum_buffer.len()
        )));
    }
    if let Some(m) = mask {
        if m.len() != d {
            return Err(Error::dimension(format!("mask length {} vs parameters {d}", m.len())));
        }
    }
    let lr = F::of(state.hyper.lr);
    let mom = F::of(state.hyper.momentum);
    let wd = F::of(state.hyper.weight_decay);
    let v = &mut state.momentum_buffer.0;
    match mask {
        None => {
            for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(grad) {
                *v = mom * *v + (g + wd * *w);
                *w = *w - lr * *v;
            }
        }
        Some(m) => {
            for (((w, v), &g), &bit) in w.iter_mut().zip(v.iter_mut()).zip(grad).zip(m.bits()) {
                *v = mom * *v + (g + wd * *w);
                let stepped = *w - lr * *v;
                *w = if bit { stepped } else { *w };
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    /// Fraction of correctly classified rows; absent for regression.
    pub accuracy: Option<f64>,
}

const EVAL_CHUNK: usize = 2048;

/// Mean loss (and accuracy for classification) over the whole dataset.
pub fn evaluate<F: Real>(net: &LayeredNetwork<F>, data: &Dataset<F>, loss: LossKind) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut loss_sum = 0.0;
    let mut denom = 0.0;
    let mut correct = 0usize;
    let mut has_acc = false;
    let mut start = 0;
    while start < data.len() {
        let end = (start + EVAL_CHUNK).min(data.len());
        let (x, t) = data.batch(start..end);
        let logits = net.forward(x)?;
        let (_, stats) = output_delta(logits.view(), t, loss)?;
        loss_sum += stats.loss_sum;
        denom += stats.denominator;
        if let Some(c) = stats.correct {
            correct += c;
            has_acc = true;
        }
        start = end;
    }
    Ok(Metrics {
        loss: loss_sum / denom,
        accuracy: has_acc.then(|| correct as f64 / data.len() as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub sgd: SgdConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        self.sgd.validate()
    }
}

/// Mini-batch SGD for `cfg.epochs` epochs.
///
/// The sample order of every epoch is a fresh shuffle drawn from a single
/// stream seeded by `shuffle_seed`; nothing else is random, so equal inputs
/// give bit-identical parameters. Returns the running mean of the mini-batch
/// metrics of each epoch.
pub fn train<F: Real>(
    net: &mut LayeredNetwork<F>,
    data: &Dataset<F>,
    cfg: &TrainConfig,
    state: &mut OptimizerState<F>,
    mask: Option<&GradientMask>,
    shuffle_seed: u64,
) -> Result<Vec<Metrics>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.input_dim() != net.spec.input_dim() {
        return Err(Error::dimension(format!(
            "dataset width {} vs network input {}",
            data.input_dim(),
            net.spec.input_dim()
        )));
    }
    let loss = data.default_loss();
    let mut rng = seed::rng(shuffle_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![F::zero(); net.params.len()];
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut denom = 0.0;
        let mut correct: Option<usize> = None;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let (x, t) = batch.batch(0..batch.len());
            let stats = net
                .loss_and_grad_into(x, t, loss, &mut grad)
                .map_err(|e| match e {
                    Error::NonFinite { layer } => Error::Diverged {
                        epoch,
                        detail: format!("non-finite activations in layer {layer}"),
                    },
                    other => other,
                })?;
            if !stats.loss_sum.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "loss is not finite".into(),
                });
            }
            loss_sum += stats.loss_sum;
            denom += stats.denominator;
            if let Some(c) = stats.correct {
                *correct.get_or_insert(0) += c;
            }
            sgd_update(&mut net.params, &grad, state, mask)?;
        }
        history.push(Metrics {
            loss: loss_sum / denom,
            accuracy: correct.map(|c| c as f64 / data.len() as f64),
        });
    }
    Ok(history)
}

/// Mean of per-row values, used by reports.
pub fn column_mean<F: Real>(a: &Array2<F>) -> Array1<f64> {
    a.mapv(|v| v.as_f64()).mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(a.ncols()))
}
