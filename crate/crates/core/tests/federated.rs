use nalign::data::gen_blobs;
use nalign::fed::{
    aggregate, dirichlet_partition, local_update, pnu_split, run_federated, run_federated_with, FedSeeds,
    FederatedConfig, LocalTraining, Method, ProcessingOrder,
};
use nalign::mask::{reverse_mask, sample_mask, GradientMask};
use nalign::nn::{build_network, train, Dataset, LayeredNetwork, NetworkSpec, OptimizerState, OutputHead, SgdConfig, Targets, TrainConfig};
use nalign::{seed, Error, ErrorClass};

fn setup() -> (NetworkSpec, Dataset<f64>, Dataset<f64>) {
    let spec = NetworkSpec::new(vec![6, 16, 16, 5], OutputHead::SoftmaxCeLogits, 2).unwrap();
    let train = gen_blobs(5, 60, 6, 1.5, 1).unwrap();
    let test = gen_blobs(5, 20, 6, 1.5, 1).unwrap();
    (spec, train, test)
}

fn config(method: Method, rho: f64) -> FederatedConfig {
    FederatedConfig {
        n_clients: 6,
        rounds: 4,
        local_epochs: 2,
        method,
        rho,
        dir: 0.5,
        selection_ratio: 1.0,
        lr0: 0.05,
        lr_decay_per_round: 0.99,
        momentum: 0.9,
        weight_decay: 5e-4,
        batch_size: 8,
        seeds: FedSeeds { partition: 1, masks: 2, selection: 3, training: 4 },
    }
}

#[test]
fn fedpfn_without_masking_is_fedavg() {
    let (spec, tr, te) = setup();
    let avg = run_federated(&spec, &config(Method::Fedavg, 0.4), &tr, &te).unwrap();
    let pfn = run_federated(&spec, &config(Method::Fedpfn, 0.0), &tr, &te).unwrap();
    assert!(avg.final_params.bit_eq(&pfn.final_params));
    assert_eq!(avg.report.csv(), pfn.report.csv());
}

#[test]
fn processing_order_does_not_matter() {
    let (spec, tr, te) = setup();
    for method in [Method::Fedavg, Method::Fedpfn, Method::Fedpnu] {
        let cfg = config(method, 0.4);
        let base = run_federated_with(&spec, &cfg, &tr, &te, ProcessingOrder::Parallel).unwrap();
        for order in [ProcessingOrder::SequentialReversed, ProcessingOrder::SequentialShuffled(17)] {
            let other = run_federated_with(&spec, &cfg, &tr, &te, order).unwrap();
            assert!(base.final_params.bit_eq(&other.final_params), "{method:?} {order:?}");
            assert_eq!(base.report, other.report);
        }
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let one = single.install(|| run_federated(&spec, &cfg, &tr, &te).unwrap());
        assert!(base.final_params.bit_eq(&one.final_params));
    }
}

#[test]
fn runs_are_reproducible_from_seeds() {
    let (spec, tr, te) = setup();
    let cfg = config(Method::Fedpnu, 0.4);
    let a = run_federated(&spec, &cfg, &tr, &te).unwrap();
    let b = run_federated(&spec, &cfg, &tr, &te).unwrap();
    assert!(a.final_params.bit_eq(&b.final_params));
    assert_eq!(a.report, b.report);
    let mut other = cfg.clone();
    other.seeds.training = 99;
    assert!(!run_federated(&spec, &other, &tr, &te).unwrap().final_params.bit_eq(&a.final_params));
}

#[test]
fn frozen_coordinates_reach_consensus_every_round() {
    let (spec, tr, te) = setup();
    let run = run_federated(&spec, &config(Method::Fedpfn, 0.4), &tr, &te).unwrap();
    assert!(run.report.rounds.iter().all(|r| r.frozen_consensus == Some(true)));

    // Independently: one round by hand.
    let global = build_network::<f64>(&spec).unwrap().into_params();
    let mask = sample_mask(&spec, 0.4, 8).unwrap();
    let local = LocalTraining { epochs: 2, batch_size: 8, sgd: SgdConfig { lr: 0.05, momentum: 0.9, weight_decay: 5e-4 } };
    let shards = [tr.head(100), tr.select(&(100..300).collect::<Vec<_>>())];
    let ups: Vec<_> = shards
        .iter()
        .enumerate()
        .map(|(i, s)| local_update(&spec, &global, s, &local, Some(&mask), false, i, i as u64).unwrap())
        .collect();
    let agg = aggregate(&[&ups[0], &ups[1]], &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
    for (k, &bit) in mask.bits().iter().enumerate() {
        if !bit {
            assert_eq!(agg[k].to_bits(), global[k].to_bits());
        }
    }
}

#[test]
fn lambdas_are_renormalized_sample_counts() {
    let (spec, tr, te) = setup();
    let mut cfg = config(Method::Fedavg, 0.0);
    cfg.selection_ratio = 0.5;
    let run = run_federated(&spec, &cfg, &tr, &te).unwrap();
    assert!(run.report.lambda_renormalized);
    let sizes = &run.report.client_sizes;
    for r in &run.report.rounds {
        assert_eq!(r.selected.len(), 3);
        let total: usize = r.selected.iter().map(|&i| sizes[i]).sum();
        for (&i, &l) in r.selected.iter().zip(&r.lambdas) {
            assert!((l - sizes[i] as f64 / total as f64).abs() < 1e-15);
        }
        assert!((r.lambdas.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let lrs: Vec<f64> = run.report.rounds.iter().map(|r| r.lr).collect();
    assert_eq!(lrs[0], 0.05);
    for w in lrs.windows(2) {
        assert!((w[1] - 0.99 * w[0]).abs() < 1e-15);
    }
    assert_eq!(run.report.rounds.len(), 4);
    let tail: f64 = run.report.rounds.iter().map(|r| r.test_acc).sum::<f64>() / 4.0;
    assert!((run.report.final_accuracy - tail).abs() < 1e-15);
}

#[test]
fn single_selected_client_becomes_global_model() {
    let (spec, tr, te) = setup();
    let mut cfg = config(Method::Fedavg, 0.0);
    cfg.n_clients = 2;
    cfg.rounds = 1;
    cfg.selection_ratio = 0.5;
    let run = run_federated(&spec, &cfg, &tr, &te).unwrap();
    let chosen = run.report.rounds[0].selected[0];
    let part = dirichlet_partition(tr.labels().unwrap(), 2, cfg.dir, cfg.seeds.partition).unwrap();
    let local = LocalTraining { epochs: cfg.local_epochs, batch_size: cfg.batch_size, sgd: SgdConfig { lr: cfg.lr0, momentum: 0.9, weight_decay: 5e-4 } };
    let init = build_network::<f64>(&spec).unwrap().into_params();
    let expect = local_update(
        &spec,
        &init,
        &tr.select(&part.assignment[chosen]),
        &local,
        None,
        false,
        chosen,
        seed::derive2(cfg.seeds.training, 0, chosen as u64),
    )
    .unwrap();
    assert!(run.final_params.bit_eq(&expect));
    let solo = aggregate(&[&expect], &[1.0]).unwrap();
    assert!(solo.bit_eq(&expect));
}

#[test]
fn fedpnu_phases() {
    assert_eq!(pnu_split(5), (2, 3));
    assert_eq!(pnu_split(1), (0, 1));
    let (spec, tr, _) = setup();
    let w0 = build_network::<f64>(&spec).unwrap().into_params();
    let mask = sample_mask(&spec, 0.4, 1).unwrap();
    let sgd = SgdConfig { lr: 0.05, momentum: 0.9, weight_decay: 5e-4 };
    let one = LocalTraining { epochs: 1, batch_size: 8, sgd };
    let pnu = local_update(&spec, &w0, &tr, &one, Some(&mask), true, 0, 5).unwrap();

    // E = 1: only the reversed phase runs (phase index 1).
    let mut net = LayeredNetwork::from_params(&spec, w0.clone()).unwrap();
    let mut state = OptimizerState::new(w0.len(), sgd);
    let cfg = TrainConfig { epochs: 1, batch_size: 8, sgd };
    train(&mut net, &tr, &cfg, &mut state, Some(&reverse_mask(&mask)), seed::derive(5, 1)).unwrap();
    assert!(pnu.bit_eq(net.params()));

    let union_all = mask.bits().iter().zip(reverse_mask(&mask).bits()).all(|(a, b)| *a || *b);
    assert!(union_all);
}

#[test]
fn all_zero_mask_leaves_model_unchanged() {
    let (spec, tr, _) = setup();
    let w0 = build_network::<f64>(&spec).unwrap().into_params();
    let frozen = sample_mask(&spec, 1.0, 0).unwrap();
    let local = LocalTraining { epochs: 3, batch_size: 8, sgd: SgdConfig { lr: 0.05, momentum: 0.9, weight_decay: 5e-4 } };
    let out = local_update(&spec, &w0, &tr, &local, Some(&frozen), false, 0, 1).unwrap();
    assert!(out.bit_eq(&w0));
    let ones = GradientMask::ones(&spec);
    assert_eq!(ones.zeros(), 0);
}

#[test]
fn client_errors_carry_client_id() {
    let spec = NetworkSpec::new(vec![1, 8, 1], OutputHead::Linear, 2).unwrap();
    let w0 = build_network::<f64>(&spec).unwrap().into_params();
    let big = ndarray::Array2::from_elem((8, 1), 1e3);
    let data = Dataset::new(big.clone(), Targets::Values(big)).unwrap();
    let local = LocalTraining { epochs: 500, batch_size: 8, sgd: SgdConfig { lr: 10.0, momentum: 0.9, weight_decay: 0.0 } };
    let err = local_update(&spec, &w0, &data, &local, None, false, 3, 0).unwrap_err();
    assert!(matches!(err, Error::Client { client: 3, .. }), "{err:?}");
    assert_eq!(err.class(), ErrorClass::Numeric);
}

fn labels(per_class: usize) -> Vec<usize> {
    (0..10 * per_class).map(|i| i % 10).collect()
}

#[test]
fn dirichlet_partition_is_a_partition() {
    let l = labels(50);
    for dir in [0.01, 0.1, 1.0, 100.0] {
        for s in 0..3 {
            let p = dirichlet_partition(&l, 20, dir, s).unwrap();
            let mut all = p.assignment.concat();
            all.sort_unstable();
            assert_eq!(all, (0..l.len()).collect::<Vec<_>>());
            assert!(p.assignment.iter().all(|a| !a.is_empty()));
            for (a, h) in p.assignment.iter().zip(&p.histograms) {
                assert_eq!(a.len(), h.iter().sum::<usize>());
            }
        }
    }
    assert!(dirichlet_partition(&labels(1), 20, 0.5, 0).is_err());
    assert!(dirichlet_partition(&labels(5), 20, 0.0, 0).is_err());
}

#[test]
fn large_concentration_is_near_uniform() {
    let l = labels(1000);
    for s in 0..3 {
        let p = dirichlet_partition(&l, 20, 100.0, s).unwrap();
        for h in &p.histograms {
            let n: usize = h.iter().sum();
            let max_share = *h.iter().max().unwrap() as f64 / n as f64;
            assert!(max_share <= 2.0 / 10.0, "seed {s}: max share {max_share}");
        }
    }
}

#[test]
fn small_concentration_is_skewed() {
    let l = labels(1000);
    for s in 0..3 {
        let p = dirichlet_partition(&l, 20, 0.1, s).unwrap();
        let mut top3: Vec<f64> = p
            .histograms
            .iter()
            .map(|h| {
                let mut c = h.clone();
                c.sort_unstable_by(|a, b| b.cmp(a));
                c[..3].iter().sum::<usize>() as f64 / c.iter().sum::<usize>() as f64
            })
            .collect();
        top3.sort_by(f64::total_cmp);
        let median = (top3[9] + top3[10]) / 2.0;
        assert!(median >= 0.8, "seed {s}: median top-3 mass {median}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let (spec, tr, te) = setup();
    for tweak in [
        |c: &mut FederatedConfig| c.n_clients = 1,
        |c: &mut FederatedConfig| c.rounds = 0,
        |c: &mut FederatedConfig| c.rho = 1.5,
        |c: &mut FederatedConfig| c.selection_ratio = 0.0,
        |c: &mut FederatedConfig| c.dir = -1.0,
    ] {
        let mut cfg = config(Method::Fedpfn, 0.4);
        tweak(&mut cfg);
        let err = run_federated(&spec, &cfg, &tr, &te).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Config);
    }
}
