//! Replica training and interpolation: two networks from one initialization,
//! trained with different batch orders (optionally inside a masked subspace
//! or after pruning), then compared along the linear path.

use serde::{Deserialize, Serialize};

use crate::connect::{barrier_report, sweep, BarrierReport, InterpolationProfile};
use crate::mask::{prune_at_init, sample_mask, GradientMask};
use crate::nn::{build_network, train, Dataset, LayeredNetwork, Metrics, NetworkSpec, OptimizerState, ParamVector, TrainConfig};
use crate::{seed, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Treatment {
    /// Plain SGD.
    #[default]
    Vanilla,
    /// Partially fixed neurons: a shared random mask with `rho` zeros per layer.
    Tna { rho: f64, mask_seed: u64 },
    /// Random weight pruning at initialization, pruned weights kept at zero.
    Prune { rho: f64, prune_seed: u64 },
}

impl Treatment {
    /// Maps ratio 0 to the vanilla path.
    pub fn normalized(self) -> Self {
        match self {
            Treatment::Tna { rho, .. } | Treatment::Prune { rho, .. } if rho == 0.0 => Treatment::Vanilla,
            t => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaPair<F> {
    pub init: ParamVector<F>,
    pub a: LayeredNetwork<F>,
    pub b: LayeredNetwork<F>,
    pub mask: Option<GradientMask>,
    pub history_a: Vec<Metrics>,
    pub history_b: Vec<Metrics>,
}

/// Trains two replicas from the shared initialization of `spec` with shuffle
/// seeds `shuffle_seeds`; the replicas train concurrently.
pub fn train_replicas<F: Real>(
    spec: &NetworkSpec,
    data: &Dataset<F>,
    cfg: &TrainConfig,
    treatment: Treatment,
    shuffle_seeds: (u64, u64),
) -> Result<ReplicaPair<F>> {
    let mut init = build_network::<F>(spec)?;
    let mask = match treatment.normalized() {
        Treatment::Vanilla => None,
        Treatment::Tna { rho, mask_seed } => Some(sample_mask(spec, rho, mask_seed)?),
        Treatment::Prune { rho, prune_seed } => {
            let (pruned, keep) = prune_at_init(&init, rho, prune_seed)?;
            init = pruned;
            Some(keep)
        }
    };
    let run = |shuffle: u64| -> Result<(LayeredNetwork<F>, Vec<Metrics>)> {
        let mut net = init.clone();
        let mut state = OptimizerState::new(spec.param_count(), cfg.sgd);
        let history = train(&mut net, data, cfg, &mut state, mask.as_ref(), shuffle)?;
        Ok((net, history))
    };
    let (ra, rb) = rayon::join(|| run(shuffle_seeds.0), || run(shuffle_seeds.1));
    let (a, history_a) = ra?;
    let (b, history_b) = rb?;
    Ok(ReplicaPair {
        init: init.into_params(),
        a,
        b,
        mask,
        history_a,
        history_b,
    })
}

/// Replica shuffle seeds for pair `index` under `base`; distinct within a pair.
pub fn pair_seeds(base: u64, index: u64) -> (u64, u64) {
    (seed::derive2(base, index, 0), seed::derive2(base, index, 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmcOutcome<F> {
    pub pair: ReplicaPair<F>,
    pub profile: InterpolationProfile,
    pub report: BarrierReport,
}

/// Trains a replica pair and sweeps the path between them on `eval`.
pub fn run_lmc<F: Real>(
    spec: &NetworkSpec,
    train_data: &Dataset<F>,
    eval: &Dataset<F>,
    cfg: &TrainConfig,
    treatment: Treatment,
    shuffle_seeds: (u64, u64),
    grid_size: usize,
) -> Result<LmcOutcome<F>> {
    let pair = train_replicas(spec, train_data, cfg, treatment, shuffle_seeds)?;
    let profile = sweep(spec, pair.a.params(), pair.b.params(), eval, grid_size, eval.default_loss())?;
    let report = barrier_report(&profile)?;
    Ok(LmcOutcome { pair, profile, report })
}
