use mixsei_core::channel::{ChannelConfig, ChannelKind};
use mixsei_core::dataset::{generate, read_dataset, write_dataset, Manifest, Overlap, ScenarioConfig, Split};
use mixsei_core::impairment::ImpairmentRanges;
use mixsei_core::metrics::metrics_report;
use mixsei_core::model::{load_checkpoint, save_checkpoint, train, Arch, ExtractorConfig, ModelSpec, TrainConfig};
use mixsei_core::rng::RngStream;
use mixsei_core::Model64;

fn scenario(window_len: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::with_drawn_profiles(
        3,
        Overlap::Full,
        ChannelConfig::awgn(10.0),
        &ImpairmentRanges::default(),
        5,
    );
    cfg.window_len = window_len;
    cfg.num_symbols = 64;
    cfg
}

fn dataset_bytes(seed: u64, threads: usize) -> Vec<u8> {
    let cfg = scenario(128);
    let grid = [0.0, 12.0];
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let data = pool.install(|| generate(&cfg, seed, Split::Train, &grid, 6)).unwrap();
    let mut buf = Vec::new();
    write_dataset(
        &mut buf,
        &Manifest::new(cfg, seed, Split::Train, grid.to_vec(), 6),
        &data,
    )
    .unwrap();
    buf
}

#[test]
fn dataset_files_are_reproducible() {
    let a = dataset_bytes(9, 1);
    assert_eq!(a, dataset_bytes(9, 1));
    assert_eq!(a, dataset_bytes(9, 3), "worker count changed the output");
    assert_ne!(a, dataset_bytes(10, 1));
}

#[test]
fn dataset_file_round_trips() {
    let a = dataset_bytes(2, 1);
    let (manifest, data) = read_dataset(&a[..]).unwrap();
    assert_eq!(data.len(), 12);
    assert_eq!(manifest.count, 12);
    assert!(data[..6].iter().all(|e| e.snr_db == 0.0));
    assert!(data[6..].iter().all(|e| e.snr_db == 12.0));
    for e in &data {
        assert!((e.power() - 1.0).abs() < 1e-4);
        assert!(e.label.active_count() >= 1);
    }
    let mut b = Vec::new();
    write_dataset(&mut b, &manifest, &data).unwrap();
    assert_eq!(a, b);
}

#[test]
fn splits_do_not_share_examples() {
    let cfg = scenario(128);
    let train_set = generate(&cfg, 1, Split::Train, &[5.0], 4).unwrap();
    let test_set = generate(&cfg, 1, Split::Test, &[5.0], 4).unwrap();
    for a in &train_set {
        assert!(test_set.iter().all(|b| a.window != b.window));
    }
}

#[test]
fn mixtures_hit_requested_snr() {
    for snr in [-3.0, 6.0, 18.0] {
        let got = mixsei_validation::mean_measured_snr(snr, 20, 1700);
        assert!((got - snr).abs() <= 0.2, "requested {snr} dB, measured {got:.3} dB");
    }
}

fn small_model(seed: u64, arch: Arch) -> Model64 {
    let spec = ModelSpec::new(
        arch,
        3,
        ExtractorConfig {
            input_len: 128,
            ..ExtractorConfig::with_width(0.125)
        },
    );
    Model64::new(spec, &mut RngStream::new(seed, 0).rng()).unwrap()
}

fn small_train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_in_double_precision() {
    let data = generate(&scenario(128), 4, Split::Train, &[15.0], 24).unwrap();
    let run = || {
        let mut m = small_model(1, Arch::Smei);
        let log = train(&mut m, &data, None, &small_train_cfg(3), |_| {}).unwrap();
        let mut ckpt = Vec::new();
        save_checkpoint(&mut ckpt, &m, None).unwrap();
        (log, ckpt)
    };
    let (la, ca) = run();
    let (lb, cb) = run();
    assert_eq!(la, lb);
    assert_eq!(ca, cb);
}

#[test]
fn reloaded_checkpoint_reproduces_final_metrics() {
    for arch in [Arch::Smei, Arch::Baseline] {
        let data = generate(&scenario(128), 6, Split::Train, &[15.0], 20).unwrap();
        let mut m = small_model(2, arch);
        let cfg = small_train_cfg(2);
        let log = train(&mut m, &data, None, &cfg, |_| {}).unwrap();
        let mut ckpt = Vec::new();
        save_checkpoint(&mut ckpt, &m, None).unwrap();
        let (m2, _) = load_checkpoint::<f64, _>(&ckpt[..]).unwrap();
        let pred = m2.predict_examples(&data, cfg.theta, cfg.batch_size).unwrap();
        let truth: Vec<_> = data.iter().map(|e| e.label.clone()).collect();
        assert_eq!(metrics_report(&pred, &truth).unwrap(), log.final_train, "{arch:?}");
    }
}

#[test]
fn small_set_is_memorized() {
    let mut cfg = scenario(128);
    cfg.channel = ChannelConfig::noiseless(ChannelKind::Awgn);
    let data = generate(&cfg, 8, Split::Train, &[0.0], 8).unwrap();
    let mut m = small_model(3, Arch::Smei);
    let mut tc = small_train_cfg(150);
    tc.schedule.base_lr = 3e-3;
    tc.schedule.step_size = 1000;
    let log = train(&mut m, &data, None, &tc, |_| {}).unwrap();
    let first = log.epochs[0].train_loss;
    let last = log.epochs.last().unwrap().train_loss;
    assert!(last < 0.1 * first, "loss {first} -> {last}");
    assert_eq!(log.final_train.subset_accuracy, 1.0);
}

#[test]
fn rejects_mismatched_examples() {
    let data = generate(&scenario(64), 1, Split::Train, &[0.0], 2).unwrap();
    let mut m = small_model(0, Arch::Smei);
    assert!(matches!(
        train(&mut m, &data, None, &small_train_cfg(1), |_| {}),
        Err(mixsei_core::Error::ShapeMismatch { .. })
    ));
}
