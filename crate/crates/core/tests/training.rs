mod common;

use std::time::Instant;

use cenet::attention::AttentionKind;
use cenet::backbone::NetworkConfig;
use cenet::checkpoint;
use cenet::train::{self, cross_entropy_loss, split_dataset, window_average, EpochRecord, Optimizer, OptimizerConfig, TrainConfig};
use cenet::{ops::Mode, params::Ctx, params::ParamStore, tensor::Tensor, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MICRO: &str = "
stem = 8
stage.1 = fused in=8 out=8 e=1 s=1 r=1 safm=1
stage.2 = mbconv in=8 out=16 e=2 s=2 r=1 attn=ce
head = 16
classes = 4
input = 16
";

fn smoke_config(root: &std::path::Path, out: &str, network: NetworkConfig) -> TrainConfig {
    let mut cfg = TrainConfig::new(network, root.join("data"), root.join(out));
    cfg.epochs = 200;
    cfg.stop_at_train_accuracy = Some(1.0);
    cfg.seed = 3;
    cfg
}

#[test]
fn overfit_smoke_reaches_full_train_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    common::solid_color_dataset(&dir.path().join("data"), 10, 64, 12, 1);
    let start = Instant::now();
    let outcome = train::train(&smoke_config(dir.path(), "run", NetworkConfig::nano())).unwrap();
    let m = &outcome.metrics;
    println!(
        "overfit: {} epochs, final train accuracy {}, {:.1}s",
        m.records.len(),
        m.train_accuracy.last().unwrap(),
        start.elapsed().as_secs_f64()
    );
    assert_eq!(*m.train_accuracy.last().unwrap(), 1.0);
    assert!(m.records.len() <= 200);
    for r in &m.records {
        assert!((0.0..=1.0).contains(&r.accuracy) && r.loss >= 0.0);
    }
    assert!(dir.path().join("run/metrics.tsv").is_file());
    assert!(dir.path().join("run/best.cev2").is_file());
}

#[test]
fn ablation_run_completes() {
    let dir = tempfile::tempdir().unwrap();
    common::solid_color_dataset(&dir.path().join("data"), 10, 64, 12, 1);
    let network = train::ablate(NetworkConfig::nano(), Some(AttentionKind::None), false);
    assert!(network.stages.iter().all(|s| s.attention == AttentionKind::None));
    let outcome = train::train(&smoke_config(dir.path(), "ablation", network)).unwrap();
    let m = &outcome.metrics;
    println!("ablation: {} epochs, final train accuracy {}", m.records.len(), m.train_accuracy.last().unwrap());
    assert!(m.records.len() >= 10);
    assert!(m.accuracy_avg.is_finite() && m.loss_avg.is_finite());
    let tsv = std::fs::read_to_string(dir.path().join("ablation/metrics.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), m.records.len() + 3);
}

fn micro_config(root: &std::path::Path, out: &str) -> TrainConfig {
    let mut cfg = TrainConfig::new(NetworkConfig::parse(MICRO).unwrap(), root.join("data"), root.join(out));
    cfg.epochs = 10;
    cfg.batch_size = 8;
    cfg.seed = 5;
    cfg.augment = true;
    cfg.augment_config.per_class_new = 4;
    cfg
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    common::solid_color_dataset(&dir.path().join("data"), 6, 24, 20, 2);
    let a = train::train(&micro_config(dir.path(), "a")).unwrap();
    let b = train::train(&micro_config(dir.path(), "b")).unwrap();
    assert_eq!(a.metrics, b.metrics);
    for file in ["metrics.tsv", "best.cev2", "network.cfg"] {
        let read = |run: &str| std::fs::read(dir.path().join(run).join(file)).unwrap();
        assert_eq!(read("a"), read("b"), "{file}");
    }
    let mut other = micro_config(dir.path(), "c");
    other.seed = 6;
    train::train(&other).unwrap();
    assert_ne!(std::fs::read(dir.path().join("a/best.cev2")).unwrap(), std::fs::read(dir.path().join("c/best.cev2")).unwrap());
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (_, store) = cenet::backbone::build_network(&NetworkConfig::nano(), 9).unwrap();
    let first = dir.path().join("a.cev2");
    checkpoint::save(&store, &first).unwrap();
    let loaded = checkpoint::load(&first).unwrap();
    assert_eq!(loaded, store);
    let second = dir.path().join("b.cev2");
    checkpoint::save(&loaded, &second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    assert_eq!(checkpoint::to_bytes(&loaded).unwrap(), std::fs::read(&first).unwrap());

    let mut bytes = std::fs::read(&first).unwrap();
    bytes.truncate(bytes.len() / 2);
    assert!(checkpoint::read(&bytes[..]).is_err());
    assert!(checkpoint::read(&b"NOPE"[..]).is_err());
}

#[test]
fn trained_checkpoint_evaluates_consistently() {
    let dir = tempfile::tempdir().unwrap();
    common::solid_color_dataset(&dir.path().join("data"), 5, 16, 10, 4);
    let mut cfg = micro_config(dir.path(), "run");
    cfg.augment = false;
    let outcome = train::train(&cfg).unwrap();
    let network = NetworkConfig::parse(&std::fs::read_to_string(dir.path().join("run/network.cfg")).unwrap()).unwrap();
    assert_eq!(network, cfg.network);
    let (acc, loss, n) = train::evaluate_checkpoint(&network, &dir.path().join("run/best.cev2"), &dir.path().join("data")).unwrap();
    assert_eq!(n, 20);
    assert!((0.0..=1.0).contains(&acc) && loss.is_finite());
    assert_eq!(outcome.best_store, checkpoint::load(&dir.path().join("run/best.cev2")).unwrap());
}

fn scalar_store(value: f64) -> (ParamStore, cenet::params::ParamId) {
    let mut store = ParamStore::new();
    let id = store.add("p", Tensor::from_vec([1, 1, 1, 1], vec![value]).unwrap(), true).unwrap();
    (store, id)
}

fn square_grads(store: &ParamStore, id: cenet::params::ParamId) -> cenet::params::ParamGrads {
    let mut ctx = Ctx::new(store, Mode::Train);
    let v = ctx.var(id);
    let sq = ctx.tape.mul(v, v).unwrap();
    let loss = ctx.tape.sum(sq);
    ctx.backward(loss).unwrap()
}

#[test]
fn adam_matches_hand_recurrence() {
    let (mut store, id) = scalar_store(1.0);
    let cfg = OptimizerConfig::adam(0.1);
    let mut opt = Optimizer::new(cfg, &store);
    let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=3 {
        let grads = square_grads(&store, id);
        opt.step(&mut store, &grads);
        let g = 2.0 * p;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        p -= 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((store.get(id).data()[0] - p).abs() < 1e-15, "step {t}");
    }
}

#[test]
fn sgd_momentum_matches_hand_recurrence() {
    let (mut store, id) = scalar_store(1.0);
    let mut opt = Optimizer::new(OptimizerConfig::sgd(0.05), &store);
    let (mut p, mut vel) = (1.0f64, 0.0f64);
    for _ in 0..4 {
        let grads = square_grads(&store, id);
        opt.step(&mut store, &grads);
        vel = 0.9 * vel + 2.0 * p;
        p -= 0.05 * vel;
        assert!((store.get(id).data()[0] - p).abs() < 1e-15);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    for cfg in [OptimizerConfig::sgd(0.0), OptimizerConfig::adam(0.0)] {
        let (mut store, id) = scalar_store(0.7);
        let mut opt = Optimizer::new(cfg, &store);
        for _ in 0..3 {
            let grads = square_grads(&store, id);
            opt.step(&mut store, &grads);
        }
        assert_eq!(store.get(id).data()[0], 0.7);
    }
}

fn series(n: usize) -> Vec<EpochRecord> {
    (0..n)
        .map(|e| EpochRecord { epoch: e, accuracy: 0.5 + 0.01 * e as f64, loss: e as f64 })
        .collect()
}

#[test]
fn window_average_uses_the_last_ten_records() {
    let records = series(50);
    let (acc, loss) = window_average(&records, 10).unwrap();
    assert!((acc - 0.945).abs() < 1e-12, "{acc}");
    assert_eq!(loss, (40..50).sum::<usize>() as f64 / 10.0);

    let mut poisoned = records.clone();
    for r in &mut poisoned[..40] {
        r.accuracy = f64::NAN;
        r.loss = f64::NAN;
    }
    assert_eq!(window_average(&poisoned, 10).unwrap(), (acc, loss));

    assert_eq!(window_average(&series(10), 10).unwrap().0, series(10).iter().map(|r| r.accuracy).sum::<f64>() / 10.0);
    assert!(matches!(window_average(&series(9), 10), Err(Error::TooFewRecords { window: 10, got: 9 })));
}

#[test]
fn epochs_below_window_are_rejected() {
    let mut cfg = TrainConfig::new(NetworkConfig::nano(), "d", "o");
    cfg.epochs = 9;
    assert!(cfg.validate().is_err());
    cfg.epochs = 10;
    assert!(cfg.validate().is_ok());
    cfg.batch_size = 0;
    assert!(cfg.validate().is_err());
}

#[test]
fn train_config_file_parses() {
    let base = std::path::Path::new("/base");
    let cfg = TrainConfig::parse(
        "network = nano\ndataset = data\nepochs = 12\noptimizer = adam\nseed = 4\nattention = se\nsafm = false\n",
        base,
    )
    .unwrap();
    assert_eq!(cfg.dataset, base.join("data"));
    assert_eq!(cfg.out_dir, base.join("run"));
    assert_eq!((cfg.epochs, cfg.batch_size, cfg.seed), (12, 16, 4));
    assert_eq!(cfg.optimizer, OptimizerConfig::adam(1e-3));
    assert_eq!(cfg.network, train::ablate(NetworkConfig::nano(), Some(AttentionKind::Se), false));
    assert!(TrainConfig::parse("dataset = d\nbogus = 1", base).is_err());
    assert!(TrainConfig::parse("epochs = 5", base).is_err());
}

#[test]
fn split_partitions_each_class() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for (class, n) in [("a", 100usize), ("b", 5), ("c", 1)] {
        std::fs::create_dir_all(root.join(class)).unwrap();
        for k in 0..n {
            cenet::augment::Raster::filled(2, 2, [k as u8; 3]).write(&root.join(class).join(format!("{k:03}.ppm"))).unwrap();
        }
    }
    let split = split_dataset(root, 0.8, 1).unwrap();
    let count = |v: &[train::Sample], c: usize| v.iter().filter(|s| s.class_index == c).count();
    assert_eq!(split.classes, ["a", "b", "c"]);
    assert_eq!((count(&split.train, 0), count(&split.test, 0)), (80, 20));
    assert_eq!((count(&split.train, 1), count(&split.test, 1)), (4, 1));
    assert_eq!((count(&split.train, 2), count(&split.test, 2)), (1, 0));
    assert_eq!(split.warnings.len(), 1);
    assert!(split.warnings[0].contains("\"c\""));

    let mut all: Vec<_> = split.train.iter().chain(&split.test).map(|s| s.path.clone()).collect();
    all.sort();
    let before = all.len();
    all.dedup();
    assert_eq!((before, all.len()), (106, 106));

    assert_eq!(split_dataset(root, 0.8, 1).unwrap(), split);
    assert_ne!(split_dataset(root, 0.8, 2).unwrap().train, split.train);
    let manifest = split.manifest_text(&split.test);
    assert_eq!(manifest.lines().count(), 21);
    assert!(manifest.lines().all(|l| l.split('\t').count() == 3));
    assert!(split_dataset(root, 1.0, 0).is_err());
}

#[test]
fn cross_entropy_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = Tensor::uniform([4, 3, 1, 1], -3.0, 3.0, &mut rng);
    let labels = [2usize, 0, 1, 1];
    let d = logits.data();
    let want = (0..4)
        .map(|n| {
            let row = &d[n * 3..n * 3 + 3];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            z.ln() - row[labels[n]]
        })
        .sum::<f64>()
        / 4.0;
    assert!((cross_entropy_loss(&logits, &labels).unwrap() - want).abs() < 1e-12);
    assert!(cross_entropy_loss(&logits, &[0, 1, 5, 0]).is_err());
}

#[test]
fn diverging_run_aborts_with_epoch_and_batch() {
    let dir = tempfile::tempdir().unwrap();
    common::solid_color_dataset(&dir.path().join("data"), 5, 16, 10, 4);
    let mut cfg = micro_config(dir.path(), "run");
    cfg.augment = false;
    cfg.optimizer = OptimizerConfig::sgd(1e200);
    match train::train(&cfg) {
        Err(Error::NonFiniteLoss { epoch, batch }) => println!("aborted at epoch {epoch}, batch {batch}"),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
    assert!(!dir.path().join("run/best.cev2").exists());
}
