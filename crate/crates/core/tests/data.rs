use proptest::prelude::*;

use nalign::checkpoint;
use nalign::data::{
    default_cache_dir, gen_blobs, image_set_available, load_image_set, normalize, parse_cifar10_bin, parse_idx,
    serialize_idx, DataError, IdxHeader, IdxTensor, ImageSet, Normalization, Split, CIFAR_RECORD_LEN,
};
use nalign::nn::{
    build_network, evaluate, train, LossKind, NetworkSpec, OptimizerState, OutputHead, SgdConfig, TrainConfig,
};
use nalign::Error;

fn idx_err(bytes: &[u8]) -> &'static str {
    parse_idx(bytes).unwrap_err().kind()
}

#[test]
fn idx_fixtures() {
    assert_eq!(idx_err(&[0xde, 0xad, 0xbe, 0xef, 0, 0, 0, 0]), "bad_magic");
    assert_eq!(idx_err(&[0, 0, 8, 3, 0, 0, 0, 2, 0, 0]), "truncated_header");
    assert_eq!(idx_err(&[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 9]), "truncated_payload");
    assert_eq!(idx_err(&[0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9, 9]), "trailing_bytes");

    let empty = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 0]).unwrap();
    assert_eq!(empty.dims(), &[0]);

    let bytes = [0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 12, 200];
    let t = parse_idx(&bytes).unwrap();
    assert_eq!(t.dims(), &[2, 1, 1]);
    assert_eq!(serialize_idx(&t), bytes);
}

#[test]
fn cifar_fixtures() {
    assert!(parse_cifar10_bin::<f32>(&[]).unwrap().is_empty());
    let mut rec = vec![128u8; CIFAR_RECORD_LEN];
    rec[0] = 7;
    let d = parse_cifar10_bin::<f32>(&rec).unwrap();
    assert_eq!(d.labels().unwrap(), &[7]);
    assert_eq!(d.inputs().shape(), &[1, 3072]);
    assert!(d.inputs().iter().all(|&p| p == 128.0));

    assert!(matches!(parse_cifar10_bin::<f32>(&rec[1..]), Err(Error::Data(DataError::CifarLength(3072)))));
    let mut two = rec.clone();
    two.extend(std::iter::once(11u8).chain(std::iter::repeat_n(0, CIFAR_RECORD_LEN - 1)));
    assert!(matches!(
        parse_cifar10_bin::<f32>(&two),
        Err(Error::Data(DataError::CifarLabel { record: 1, label: 11 }))
    ));
}

#[test]
fn official_headers_when_cached() {
    let cache = default_cache_dir();
    for set in [ImageSet::Mnist, ImageSet::FashionMnist] {
        if !image_set_available(&cache, set) {
            eprintln!("{set:?} not cached, skipping");
            continue;
        }
        for (split, n) in [(Split::Train, 60_000), (Split::Test, 10_000)] {
            let d = load_image_set::<f32>(&cache, set, split).unwrap();
            assert_eq!(d.len(), n);
            assert_eq!(d.input_dim(), 784);
            assert!(d.labels().unwrap().iter().all(|&l| l < 10));
            assert!(d.inputs().iter().all(|&p| (0.0..=255.0).contains(&p)));
            let (scaled, _) = normalize(&d, &d.head(1), Normalization::UnitScale).unwrap();
            assert_eq!(scaled.inputs().iter().cloned().fold(0.0f32, f32::max), 1.0);
        }
    }
}

fn linear_probe_accuracy(classes: usize, separation: f64, seed: u64) -> f64 {
    let train_set = gen_blobs(classes, 100, 2, separation, seed).unwrap();
    let spec = NetworkSpec::new(vec![2, classes], OutputHead::SoftmaxCeLogits, seed).unwrap();
    let mut net = build_network::<f64>(&spec).unwrap();
    let cfg = TrainConfig { epochs: 200, batch_size: 16, sgd: SgdConfig { lr: 0.05, momentum: 0.9, weight_decay: 0.0 } };
    let mut state = OptimizerState::new(spec.param_count(), cfg.sgd);
    train(&mut net, &train_set, &cfg, &mut state, None, seed).unwrap();
    evaluate(&net, &train_set, LossKind::SoftmaxCe).unwrap().accuracy.unwrap()
}

#[test]
fn separated_blobs_are_linearly_separable() {
    // Random centers: with more classes two of them can land close together.
    for seed in 0..5 {
        let acc = linear_probe_accuracy(2, 10.0, seed);
        assert!(acc > 0.99, "seed {seed}: {acc}");
    }
}

#[test]
fn coincident_blobs_are_chance_level() {
    let mut total = 0.0;
    for seed in 0..5 {
        total += linear_probe_accuracy(4, 0.0, seed);
    }
    let mean = total / 5.0;
    // Fitting 400 points from one Gaussian: a little above 1/4 at most.
    assert!((mean - 0.25).abs() < 0.1, "{mean}");
}

#[test]
fn unit_scale_maps_pixels_into_unit_interval() {
    let mut rec = vec![0u8; CIFAR_RECORD_LEN * 2];
    rec[1] = 255;
    rec[CIFAR_RECORD_LEN + 2] = 51;
    let d = parse_cifar10_bin::<f32>(&rec).unwrap();
    let (a, b) = normalize(&d, &d.head(1), Normalization::UnitScale).unwrap();
    assert_eq!(a.inputs()[[0, 0]], 1.0);
    assert_eq!(a.inputs()[[1, 1]], 0.2);
    assert_eq!(b.len(), 1);
    assert!(a.inputs().iter().all(|&p| (0.0..=1.0).contains(&p)));
    let (same, _) = normalize(&d, &d, Normalization::None).unwrap();
    assert_eq!(same, d);
}

#[test]
fn checkpoints_round_trip_and_reject_damage() {
    let spec = NetworkSpec::new(vec![3, 5, 2], OutputHead::SoftmaxCeLogits, 8).unwrap();
    let net = build_network::<f64>(&spec).unwrap();
    let bytes = checkpoint::to_bytes(&net).unwrap();
    let back = checkpoint::from_bytes::<f64>(&bytes).unwrap();
    assert!(back.params().bit_eq(net.params()));
    assert_eq!(back.spec(), net.spec());

    let narrow = checkpoint::from_bytes::<f32>(&bytes).unwrap();
    for (a, b) in narrow.params().iter().zip(net.params().iter()) {
        assert_eq!(*a, *b as f32);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&net, &path).unwrap();
    assert!(checkpoint::load::<f64>(&path).unwrap().params().bit_eq(net.params()));

    let kind = |b: &[u8]| match checkpoint::from_bytes::<f64>(b) {
        Err(Error::Data(e)) => e.kind(),
        other => panic!("{other:?}"),
    };
    assert_eq!(kind(&bytes[..bytes.len() - 1]), "truncated_payload");
    let mut extra = bytes.clone();
    extra.push(0);
    assert_eq!(kind(&extra), "trailing_bytes");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(kind(&bad), "bad_magic");
    assert_eq!(kind(&bytes[..6]), "truncated_header");
}

proptest! {
    #[test]
    fn idx_round_trips(n in 0u32..6, rows in 1u32..5, cols in 1u32..5, images in any::<bool>(), fill in any::<u8>()) {
        let (magic, dims) = if images { (0x803, vec![n, rows, cols]) } else { (0x801, vec![n]) };
        let header = IdxHeader { magic, dims };
        let data: Vec<u8> = (0..header.payload_len()).map(|i| fill.wrapping_add(i as u8)).collect();
        let t = IdxTensor { header, data };
        let bytes = serialize_idx(&t);
        prop_assert_eq!(parse_idx(&bytes).unwrap(), t);
        if !bytes.is_empty() {
            prop_assert!(parse_idx(&bytes[..bytes.len() - 1]).is_err());
        }
    }
}
