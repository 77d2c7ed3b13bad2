//! Single-process federated learning: FedAvg, FedPFN (shared per-round mask)
//! and FedPNU (mask for the first half of local epochs, its complement for the
//! rest) over Dirichlet non-IID partitions.

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connect::weighted_average;
use crate::mask::{reverse_mask, sample_mask, GradientMask};
use crate::nn::{
    build_network, evaluate, train, Dataset, LayeredNetwork, NetworkSpec, OptimizerState, ParamVector, SgdConfig,
    TrainConfig,
};
use crate::{seed, Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fedavg,
    Fedpfn,
    Fedpnu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedSeeds {
    pub partition: u64,
    pub masks: u64,
    pub selection: u64,
    pub training: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederatedConfig {
    pub n_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub method: Method,
    #[serde(default = "default_rho")]
    pub rho: f64,
    pub dir: f64,
    #[serde(default = "one")]
    pub selection_ratio: f64,
    pub lr0: f64,
    #[serde(default = "default_decay")]
    pub lr_decay_per_round: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seeds: FedSeeds,
}

fn default_rho() -> f64 {
    0.4
}
fn one() -> f64 {
    1.0
}
fn default_decay() -> f64 {
    0.99
}
fn default_momentum() -> f64 {
    0.9
}
fn default_wd() -> f64 {
    5e-4
}

impl FederatedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 {
            return Err(Error::config("rounds and local epochs must be at least 1"));
        }
        if self.n_clients < 2 {
            return Err(Error::config(format!("need at least 2 clients, got {}", self.n_clients)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::config(format!("mask ratio must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.dir > 0.0 && self.dir.is_finite()) {
            return Err(Error::config(format!("Dirichlet concentration must be positive, got {}", self.dir)));
        }
        if !(self.selection_ratio > 0.0 && self.selection_ratio <= 1.0) {
            return Err(Error::config(format!(
                "selection ratio must lie in (0, 1], got {}",
                self.selection_ratio
            )));
        }
        if !(self.lr_decay_per_round > 0.0 && self.lr_decay_per_round.is_finite()) {
            return Err(Error::config("learning-rate decay must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        self.sgd(self.lr0).validate()
    }

    fn sgd(&self, lr: f64) -> SgdConfig {
        SgdConfig {
            lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    /// Clients selected per round (at least one).
    pub fn clients_per_round(&self) -> usize {
        ((self.selection_ratio * self.n_clients as f64).round() as usize).clamp(1, self.n_clients)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPartition {
    /// Sorted sample indices per client.
    pub assignment: Vec<Vec<usize>>,
    /// Per-client sample count of every class.
    pub histograms: Vec<Vec<usize>>,
}

impl ClientPartition {
    pub fn sizes(&self) -> Vec<usize> {
        self.assignment.iter().map(|a| a.len()).collect()
    }
}

/// Splits every class across clients by `Dirichlet(dir * 1)` proportions.
///
/// Each class's indices are shuffled and cut at `floor(cumsum(p) * n_class)`.
/// Clients left empty then take the last index of the currently largest
/// client (lowest id on ties), lowest empty id first.
pub fn dirichlet_partition(labels: &[usize], n_clients: usize, dir: f64, seed: u64) -> Result<ClientPartition> {
    if n_clients == 0 {
        return Err(Error::config("need at least one client"));
    }
    if !(dir > 0.0 && dir.is_finite()) {
        return Err(Error::config(format!("Dirichlet concentration must be positive, got {dir}")));
    }
    if labels.len() < n_clients {
        return Err(Error::config(format!(
            "{} samples cannot cover {} clients",
            labels.len(),
            n_clients
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let gamma = Gamma::new(dir, 1.0).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut assignment = vec![Vec::new(); n_clients];
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let mut p: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = p.iter().sum();
        if total > 0.0 && total.is_finite() {
            p.iter_mut().for_each(|x| *x /= total);
        } else {
            let k = index::sample(&mut rng, n_clients, 1).index(0);
            p = (0..n_clients).map(|i| if i == k { 1.0 } else { 0.0 }).collect();
        }
        let len = idx.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (k, client) in assignment.iter_mut().enumerate() {
            let end = if k + 1 == n_clients {
                len
            } else {
                cum += p[k];
                ((cum * len as f64).floor() as usize).clamp(start, len)
            };
            client.extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    for client in &mut assignment {
        client.sort_unstable();
    }
    while let Some(empty) = assignment.iter().position(|a| a.is_empty()) {
        let largest = (0..n_clients)
            .max_by(|&a, &b| assignment[a].len().cmp(&assignment[b].len()).then(b.cmp(&a)))
            .expect("n_clients > 0");
        let moved = assignment[largest].pop().expect("largest client holds at least two samples");
        assignment[empty].push(moved);
    }
    let histograms = assignment
        .iter()
        .map(|a| {
            let mut h = vec![0; n_classes];
            for &i in a {
                h[labels[i]] += 1;
            }
            h
        })
        .collect();
    Ok(ClientPartition { assignment, histograms })
}

/// Epochs of the masked and reverse-masked FedPNU phases: `(E / 2, E - E / 2)`.
pub fn pnu_split(epochs: usize) -> (usize, usize) {
    (epochs / 2, epochs - epochs / 2)
}

/// Local training shared by all methods.
#[derive(Debug, Clone, Copy)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
}

/// Trains a client from `w_start`.
///
/// Without `two_phase` all epochs use `mask`. With `two_phase` (FedPNU) the
/// first `E / 2` epochs use `mask` and the rest its complement; a phase with
/// no epochs is skipped. Each phase starts from a fresh optimizer state and
/// shuffles with `derive(seed, phase)`.
#[allow(clippy::too_many_arguments)]
pub fn local_update<F: Real>(
    spec: &NetworkSpec,
    w_start: &ParamVector<F>,
    data: &Dataset<F>,
    local: &LocalTraining,
    mask: Option<&GradientMask>,
    two_phase: bool,
    client: usize,
    seed: u64,
) -> Result<ParamVector<F>> {
    let wrap = |e: Error| Error::Client {
        client,
        source: Box::new(e),
    };
    let mut net = LayeredNetwork::from_params(spec, w_start.clone()).map_err(wrap)?;
    let reversed;
    let phases: Vec<(usize, Option<&GradientMask>)> = if two_phase {
        let m = mask.ok_or_else(|| wrap(Error::config("two-phase local update requires a mask")))?;
        reversed = reverse_mask(m);
        let (e1, e2) = pnu_split(local.epochs);
        vec![(e1, Some(m)), (e2, Some(&reversed))]
    } else {
        vec![(local.epochs, mask)]
    };
    for (phase, (epochs, m)) in phases.into_iter().enumerate() {
        if epochs == 0 {
            continue;
        }
        let cfg = TrainConfig {
            epochs,
            batch_size: local.batch_size,
            sgd: local.sgd,
        };
        let mut state = OptimizerState::new(w_start.len(), local.sgd);
        train(&mut net, data, &cfg, &mut state, m, seed::derive(seed, phase as u64)).map_err(wrap)?;
    }
    Ok(net.into_params())
}

/// `sum_i lambda_i w_i`, accumulated in client order. Coordinates on which all
/// clients agree are kept exactly.
pub fn aggregate<F: Real>(client_params: &[&ParamVector<F>], lambdas: &[f64]) -> Result<ParamVector<F>> {
    let views: Vec<&[F]> = client_params.iter().map(|p| p.values()).collect();
    weighted_average(&views, lambdas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub test_loss: f64,
    pub test_acc: f64,
    /// Local learning rate used in this round.
    pub lr: f64,
    pub selected: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// For FedPFN with at least one frozen coordinate: every frozen coordinate
    /// of the new global model equals the broadcast model.
    pub frozen_consensus: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedRunReport {
    pub config: FederatedConfig,
    pub spec: NetworkSpec,
    pub client_sizes: Vec<usize>,
    pub class_histograms: Vec<Vec<usize>>,
    /// Aggregation weights are renormalized over the selected clients.
    pub lambda_renormalized: bool,
    pub rounds: Vec<RoundRecord>,
    /// Mean test accuracy of the last five rounds (or all, if fewer).
    pub final_accuracy: f64,
}

impl FederatedRunReport {
    /// CSV with columns `round, test_loss, test_acc, lr`.
    pub fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["round", "test_loss", "test_acc", "lr"]).expect("in-memory write");
        for r in &self.rounds {
            w.write_record([
                r.round.to_string(),
                r.test_loss.to_string(),
                r.test_acc.to_string(),
                r.lr.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedRun<F> {
    pub report: FederatedRunReport,
    pub final_params: ParamVector<F>,
}

/// Order in which selected clients are trained within a round. Aggregation is
/// always in client-id order, so the result does not depend on this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProcessingOrder {
    /// Parallel map over the selected clients.
    #[default]
    Parallel,
    /// Sequential, highest id first.
    SequentialReversed,
    /// Sequential, in a shuffled order drawn from the given seed.
    SequentialShuffled(u64),
}

pub fn run_federated<F: Real>(
    spec: &NetworkSpec,
    cfg: &FederatedConfig,
    train_data: &Dataset<F>,
    test_data: &Dataset<F>,
) -> Result<FederatedRun<F>> {
    run_federated_with(spec, cfg, train_data, test_data, ProcessingOrder::Parallel)
}

pub fn run_federated_with<F: Real>(
    spec: &NetworkSpec,
    cfg: &FederatedConfig,
    train_data: &Dataset<F>,
    test_data: &Dataset<F>,
    order: ProcessingOrder,
) -> Result<FederatedRun<F>> {
    cfg.validate()?;
    let labels = train_data
        .labels()
        .ok_or_else(|| Error::config("federated simulation requires a classification dataset"))?;
    let partition = dirichlet_partition(labels, cfg.n_clients, cfg.dir, cfg.seeds.partition)?;
    let shards: Vec<Dataset<F>> = partition.assignment.iter().map(|a| train_data.select(a)).collect();
    let loss = train_data.default_loss();
    let mut global = build_network::<F>(spec)?.into_params();
    let per_round = cfg.clients_per_round();
    let mut lr = cfg.lr0;
    let mut records = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds {
        let mut selected: Vec<usize> = if per_round == cfg.n_clients {
            (0..cfg.n_clients).collect()
        } else {
            let mut rng = seed::rng(seed::derive(cfg.seeds.selection, t as u64));
            index::sample(&mut rng, cfg.n_clients, per_round).into_vec()
        };
        selected.sort_unstable();
        let mask = match cfg.method {
            Method::Fedavg => None,
            Method::Fedpfn | Method::Fedpnu => Some(sample_mask(spec, cfg.rho, seed::derive(cfg.seeds.masks, t as u64))?),
        };
        let total: usize = selected.iter().map(|&i| shards[i].len()).sum();
        let lambdas: Vec<f64> = selected.iter().map(|&i| shards[i].len() as f64 / total as f64).collect();
        let local = LocalTraining {
            epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            sgd: cfg.sgd(lr),
        };
        let two_phase = cfg.method == Method::Fedpnu;
        let update = |i: usize| {
            local_update(
                spec,
                &global,
                &shards[i],
                &local,
                mask.as_ref(),
                two_phase,
                i,
                seed::derive2(cfg.seeds.training, t as u64, i as u64),
            )
        };
        let updates: Vec<ParamVector<F>> = match order {
            ProcessingOrder::Parallel => selected.par_iter().map(|&i| update(i)).collect::<Result<_>>()?,
            ProcessingOrder::SequentialReversed | ProcessingOrder::SequentialShuffled(_) => {
                let mut visit: Vec<usize> = (0..selected.len()).collect();
                match order {
                    ProcessingOrder::SequentialShuffled(s) => visit.shuffle(&mut seed::rng(s)),
                    _ => visit.reverse(),
                }
                let mut slots: Vec<Option<ParamVector<F>>> = vec![None; selected.len()];
                for k in visit {
                    slots[k] = Some(update(selected[k])?);
                }
                slots.into_iter().map(|s| s.expect("every slot filled")).collect()
            }
        };
        let refs: Vec<&ParamVector<F>> = updates.iter().collect();
        let next = aggregate(&refs, &lambdas)?;
        let frozen_consensus = match (&mask, cfg.method) {
            (Some(m), Method::Fedpfn) if m.zeros() > 0 => Some(
                m.bits()
                    .iter()
                    .zip(next.iter().zip(global.iter()))
                    .all(|(&bit, (a, b))| bit || a.as_f64().to_bits() == b.as_f64().to_bits()),
            ),
            _ => None,
        };
        global = next;
        let metrics = evaluate(&LayeredNetwork::from_params(spec, global.clone())?, test_data, loss)?;
        records.push(RoundRecord {
            round: t + 1,
            test_loss: metrics.loss,
            test_acc: metrics.accuracy.unwrap_or(f64::NAN),
            lr,
            selected,
            lambdas,
            frozen_consensus,
        });
        lr *= cfg.lr_decay_per_round;
    }
    let tail = &records[records.len().saturating_sub(5)..];
    let final_accuracy = tail.iter().map(|r| r.test_acc).sum::<f64>() / tail.len() as f64;
    Ok(FederatedRun {
        report: FederatedRunReport {
            config: cfg.clone(),
            spec: spec.clone(),
            client_sizes: partition.sizes(),
            class_histograms: partition.histograms,
            lambda_renormalized: true,
            rounds: records,
            final_accuracy,
        },
        final_params: global,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::nn::OutputHead;

    #[test]
    fn partition_covers_disjointly() {
        let labels: Vec<usize> = (0..500).map(|i| i % 10).collect();
        for dir in [0.1, 1.0, 100.0] {
            let p = dirichlet_partition(&labels, 20, dir, 4).unwrap();
            let mut all: Vec<usize> = p.assignment.concat();
            all.sort_unstable();
            assert_eq!(all, (0..500).collect::<Vec<_>>());
            assert!(p.assignment.iter().all(|a| !a.is_empty()));
        }
    }

    #[test]
    fn partition_too_few_samples() {
        assert!(matches!(dirichlet_partition(&[0, 1], 3, 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(dirichlet_partition(&[0, 1, 2], 3, 0.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn repair_fills_empty_clients() {
        // Tiny concentration and very few samples force empty clients.
        let labels = vec![0; 12];
        let p = dirichlet_partition(&labels, 10, 0.01, 1).unwrap();
        assert!(p.assignment.iter().all(|a| !a.is_empty()));
        assert_eq!(p.sizes().iter().sum::<usize>(), 12);
    }

    #[test]
    fn pnu_split_examples() {
        assert_eq!(pnu_split(5), (2, 3));
        assert_eq!(pnu_split(1), (0, 1));
        assert_eq!(pnu_split(4), (2, 2));
    }

    #[test]
    fn aggregate_examples() {
        let a = ParamVector(vec![0.1f64, 0.7]);
        let b = ParamVector(vec![0.3f64, 0.7]);
        assert!(aggregate(&[&a], &[1.0]).unwrap().bit_eq(&a));
        let avg = aggregate(&[&a, &b], &[0.5, 0.5]).unwrap();
        assert!((avg[0] - 0.2).abs() < 1e-15);
        assert_eq!(avg[1], 0.7);
        assert!(matches!(aggregate(&[&a, &b], &[0.5, 0.4]), Err(Error::Config(_))));
    }

    #[test]
    fn frozen_mask_leaves_client_unchanged() {
        let spec = NetworkSpec::new(vec![2, 8, 3], OutputHead::SoftmaxCeLogits, 0).unwrap();
        let data = gen_blobs(3, 10, 2, 3.0, 0).unwrap();
        let w = build_network::<f64>(&spec).unwrap().into_params();
        let frozen = sample_mask(&spec, 1.0, 0).unwrap();
        let local = LocalTraining {
            epochs: 3,
            batch_size: 8,
            sgd: SgdConfig { lr: 0.1, momentum: 0.9, weight_decay: 5e-4 },
        };
        let out = local_update(&spec, &w, &data, &local, Some(&frozen), false, 0, 1).unwrap();
        assert!(out.bit_eq(&w));
    }

    #[test]
    fn config_validation() {
        let cfg = FederatedConfig {
            n_clients: 1,
            rounds: 1,
            local_epochs: 1,
            method: Method::Fedavg,
            rho: 0.4,
            dir: 0.5,
            selection_ratio: 1.0,
            lr0: 0.1,
            lr_decay_per_round: 0.99,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 8,
            seeds: FedSeeds { partition: 0, masks: 0, selection: 0, training: 0 },
        };
        assert!(cfg.validate().is_err());
        assert!(FederatedConfig { n_clients: 2, ..cfg.clone() }.validate().is_ok());
        assert!(FederatedConfig { n_clients: 2, dir: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(FederatedConfig { n_clients: 2, rounds: 0, ..cfg }.validate().is_err());
    }
}
