//! Dataset split, loss, optimizers, the training loop and windowed metrics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::AttentionKind;
use crate::augment::{self, AugmentConfig, Raster};
use crate::backbone::{build_network, parse_bool, Network, NetworkConfig};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::params::{apply_running_updates, Ctx, ParamGrads, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<EpochRecord>,
    pub window: usize,
    pub accuracy_avg: f64,
    pub loss_avg: f64,
    /// Eval-mode accuracy on the training set after each epoch.
    pub train_accuracy: Vec<f64>,
    pub best_epoch: usize,
}

impl RunMetrics {
    pub fn from_records(records: Vec<EpochRecord>, window: usize, train_accuracy: Vec<f64>) -> Result<Self> {
        let (accuracy_avg, loss_avg) = window_average(&records, window)?;
        let best_epoch = records
            .iter()
            .fold(None::<&EpochRecord>, |best, r| match best {
                Some(b) if b.accuracy >= r.accuracy => Some(b),
                _ => Some(r),
            })
            .map_or(0, |r| r.epoch);
        Ok(Self {
            records,
            window,
            accuracy_avg,
            loss_avg,
            train_accuracy,
            best_epoch,
        })
    }

    /// Tab-separated `epoch accuracy loss` rows, then the window averages.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\taccuracy\tloss\n");
        for r in &self.records {
            let _ = writeln!(out, "{}\t{}\t{}", r.epoch, r.accuracy, r.loss);
        }
        let _ = writeln!(out, "accuracy_avg\t{}", self.accuracy_avg);
        let _ = writeln!(out, "loss_avg\t{}", self.loss_avg);
        out
    }
}

/// Means of accuracy and loss over the final `window` records.
pub fn window_average(records: &[EpochRecord], window: usize) -> Result<(f64, f64)> {
    if window == 0 || records.len() < window {
        return Err(Error::TooFewRecords {
            window,
            got: records.len(),
        });
    }
    let tail = &records[records.len() - window..];
    let acc = tail.iter().map(|r| r.accuracy).sum::<f64>() / window as f64;
    let loss = tail.iter().map(|r| r.loss).sum::<f64>() / window as f64;
    Ok((acc, loss))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub class_index: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub classes: Vec<String>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub warnings: Vec<String>,
}

impl Split {
    /// One `class_index  class_name  path` line per sample.
    pub fn manifest_text(&self, samples: &[Sample]) -> String {
        let mut out = String::new();
        for s in samples {
            let _ = writeln!(out, "{}\t{}\t{}", s.class_index, self.classes[s.class_index], s.path.display());
        }
        out
    }
}

/// Per class, shuffle with `seed` and put the first `ceil(fraction·n)` files
/// in the training set and the rest in the test set.
pub fn split_dataset(root: &Path, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let mut split = Split {
        classes: Vec::new(),
        train: Vec::new(),
        test: Vec::new(),
        warnings: Vec::new(),
    };
    for (ci, (name, dir)) in augment::class_dirs(root)?.into_iter().enumerate() {
        let mut files = augment::class_files(&dir)?;
        if files.is_empty() {
            return Err(Error::Dataset(format!("class {name:?} has no files")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ci as u64);
        files.shuffle(&mut rng);
        // Guard against 0.8·n landing a hair above an integer.
        let n_train = ((fraction * files.len() as f64) - 1e-9).ceil().max(1.0) as usize;
        let n_train = n_train.min(files.len());
        if n_train == files.len() {
            split.warnings.push(format!("class {name:?}: no test samples"));
        }
        for (k, path) in files.into_iter().enumerate() {
            let s = Sample { class_index: ci, path };
            if k < n_train {
                split.train.push(s);
            } else {
                split.test.push(s);
            }
        }
        split.classes.push(name);
    }
    if split.classes.is_empty() {
        return Err(Error::Dataset(format!("no class directories under {}", root.display())));
    }
    Ok(split)
}

/// Batch-mean cross-entropy of `N×K×1×1` logits, without recording.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = tape.cross_entropy(l, labels)?;
    Ok(tape.value(loss).data()[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            lr,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::sgd(lr)
        }
    }
}

/// Optimizer state over every trainable entry of a store.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u32,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.entries().iter().map(|e| vec![0.0; e.tensor.len()]).collect();
        Self {
            config,
            second: zeros.clone(),
            first: zeros,
            steps: 0,
        }
    }

    /// SGD: `v ← μv + g; p ← p − lr·v`. Adam: bias-corrected moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let p = store.get_mut(id).data_mut();
            match c.kind {
                OptimizerKind::SgdMomentum => {
                    for ((p, v), &g) in p.iter_mut().zip(&mut self.first[i]).zip(g) {
                        *v = c.momentum * *v + g;
                        *p -= c.lr * *v;
                    }
                }
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - c.beta1.powi(t);
                    let bc2 = 1.0 - c.beta2.powi(t);
                    for (((p, m), v), &g) in p.iter_mut().zip(&mut self.first[i]).zip(&mut self.second[i]).zip(g) {
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                        *p -= c.lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub augment: bool,
    pub augment_config: AugmentConfig,
    pub resize_to: usize,
    pub window: usize,
    pub split_fraction: f64,
    /// Stop once eval-mode training accuracy reaches this value (checked
    /// only after `window` epochs so the window average stays defined).
    pub stop_at_train_accuracy: Option<f64>,
}

impl TrainConfig {
    pub fn new(network: NetworkConfig, dataset: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        let resize_to = network.input_size;
        Self {
            network,
            dataset: dataset.into(),
            out_dir: out_dir.into(),
            epochs: 50,
            batch_size: 16,
            optimizer: OptimizerConfig::sgd(0.01),
            seed: 0,
            augment: false,
            augment_config: AugmentConfig::default(),
            resize_to,
            window: DEFAULT_WINDOW,
            split_fraction: 0.8,
            stop_at_train_accuracy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.window == 0 || self.epochs < self.window {
            return Err(Error::Config(format!(
                "epochs ({}) must be at least the metric window ({})",
                self.epochs, self.window
            )));
        }
        if self.resize_to != self.network.input_size {
            return Err(Error::Config(format!(
                "resize_to {} differs from network input {}",
                self.resize_to, self.network.input_size
            )));
        }
        Ok(())
    }

    /// Parse the flat `key = value` training config. Relative paths resolve
    /// against `base_dir`. `network = nano` selects the built-in preset.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut kv = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            kv.push((k.trim().to_string(), v.trim().to_string()));
        }
        let get = |key: &str| kv.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        let mut network = match get("network") {
            None | Some("nano") => NetworkConfig::nano(),
            Some(p) => NetworkConfig::parse(&std::fs::read_to_string(path(p))?)?,
        };
        if let Some(v) = get("attention") {
            network = network.with_attention(v.parse()?);
        }
        if let Some(v) = get("safm") {
            match parse_bool(v) {
                Some(true) => {}
                Some(false) => network = network.without_safm(),
                None => return Err(Error::Config(format!("safm: bad value {v:?}"))),
            }
        }
        let dataset = path(get("dataset").ok_or_else(|| Error::Config("missing dataset".into()))?);
        let out_dir = path(get("out").unwrap_or("run"));
        let mut cfg = Self::new(network, dataset, out_dir);

        let num = |k: &str, v: &str| v.parse::<f64>().map_err(|_| Error::Config(format!("{k}: bad number {v:?}")));
        let int = |k: &str, v: &str| v.parse::<usize>().map_err(|_| Error::Config(format!("{k}: bad integer {v:?}")));
        let mut lr = None;
        for (k, v) in &kv {
            let v = v.as_str();
            match k.as_str() {
                "network" | "attention" | "safm" | "dataset" | "out" => {}
                "epochs" => cfg.epochs = int(k, v)?,
                "batch_size" => cfg.batch_size = int(k, v)?,
                "optimizer" => {
                    cfg.optimizer.kind = match v {
                        "sgd" | "sgd-momentum" => OptimizerKind::SgdMomentum,
                        "adam" => OptimizerKind::Adam,
                        other => return Err(Error::Config(format!("unknown optimizer {other:?}"))),
                    }
                }
                "lr" => lr = Some(num(k, v)?),
                "momentum" => cfg.optimizer.momentum = num(k, v)?,
                "beta1" => cfg.optimizer.beta1 = num(k, v)?,
                "beta2" => cfg.optimizer.beta2 = num(k, v)?,
                "eps" => cfg.optimizer.eps = num(k, v)?,
                "seed" => cfg.seed = v.parse().map_err(|_| Error::Config(format!("seed: bad value {v:?}")))?,
                "augment" => {
                    cfg.augment = parse_bool(v).ok_or_else(|| Error::Config(format!("augment: bad value {v:?}")))?
                }
                "aug_per_class" => cfg.augment_config.per_class_new = int(k, v)?,
                "resize_to" => cfg.resize_to = int(k, v)?,
                "window" => cfg.window = int(k, v)?,
                "split" => cfg.split_fraction = num(k, v)?,
                "stop_at_train_accuracy" => cfg.stop_at_train_accuracy = Some(num(k, v)?),
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        cfg.optimizer.lr = lr.unwrap_or(match cfg.optimizer.kind {
            OptimizerKind::SgdMomentum => 0.01,
            OptimizerKind::Adam => 1e-3,
        });
        cfg.augment_config.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Attention override helper for ablations.
pub fn ablate(network: NetworkConfig, attention: Option<AttentionKind>, safm: bool) -> NetworkConfig {
    let net = match attention {
        Some(kind) => network.with_attention(kind),
        None => network,
    };
    if safm {
        net
    } else {
        net.without_safm()
    }
}

/// A decoded, resized, normalized image.
#[derive(Debug, Clone)]
pub struct Example {
    pub image: Tensor,
    pub label: usize,
}

/// Read and resize samples, skipping unreadable files with a warning.
pub fn load_examples(samples: &[Sample], size: usize) -> Vec<(Example, Raster)> {
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        match Raster::read(&s.path) {
            Ok(r) => {
                let r = if r.width() == size && r.height() == size { r } else { r.resize(size, size) };
                out.push((
                    Example {
                        image: r.to_tensor(),
                        label: s.class_index,
                    },
                    r,
                ));
            }
            Err(e) => warn!("skipping unreadable image: {e}"),
        }
    }
    out
}

fn batch_of(examples: &[Example], idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let images: Vec<Tensor> = idx.iter().map(|&i| examples[i].image.clone()).collect();
    Ok((Tensor::stack(&images)?, idx.iter().map(|&i| examples[i].label).collect()))
}

/// Eval-mode accuracy and mean cross-entropy over `examples`.
pub fn evaluate(net: &Network, store: &ParamStore, examples: &[Example], batch_size: usize) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::Dataset("nothing to evaluate".into()));
    }
    let idx: Vec<usize> = (0..examples.len()).collect();
    let (mut correct, mut loss_sum) = (0usize, 0.0);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, labels) = batch_of(examples, chunk)?;
        let mut ctx = Ctx::new(store, Mode::Eval);
        let xv = ctx.tape.constant(x);
        let logits = net.forward(&mut ctx, xv)?;
        let loss = ctx.tape.cross_entropy(logits, &labels)?;
        loss_sum += ctx.tape.value(loss).data()[0] * chunk.len() as f64;
        let lv = ctx.tape.value(logits);
        let k = lv.channels();
        for (row, &label) in lv.data().chunks(k).zip(&labels) {
            let pred = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
            correct += usize::from(pred == label);
        }
    }
    let n = examples.len() as f64;
    Ok((correct as f64 / n, loss_sum / n))
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(
    net: &Network,
    store: &mut ParamStore,
    optimizer: &mut Optimizer,
    x: Tensor,
    labels: &[usize],
) -> Result<f64> {
    let mut ctx = Ctx::new(store, Mode::Train);
    let xv: Var = ctx.tape.constant(x);
    let logits = net.forward(&mut ctx, xv)?;
    let loss = ctx.tape.cross_entropy(logits, labels)?;
    let value = ctx.tape.value(loss).data()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = ctx.backward(loss)?;
    optimizer.step(store, &grads);
    apply_running_updates(store, &grads.updates);
    Ok(value)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub metrics: RunMetrics,
    pub network: Network,
    /// Parameters after the final epoch.
    pub final_store: ParamStore,
    /// Parameters at the epoch with the highest test accuracy.
    pub best_store: ParamStore,
}

pub const METRICS_FILE: &str = "metrics.tsv";
pub const CHECKPOINT_FILE: &str = "best.cev2";
pub const NETWORK_FILE: &str = "network.cfg";

/// Train, evaluate each epoch on the held-out split, and write
/// `metrics.tsv`, `best.cev2` and `network.cfg` into `out_dir`.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let split = split_dataset(&config.dataset, config.split_fraction, config.seed)?;
    for w in &split.warnings {
        warn!("{w}");
    }
    if split.classes.len() != config.network.num_classes {
        return Err(Error::Dataset(format!(
            "dataset has {} classes, network expects {}",
            split.classes.len(),
            config.network.num_classes
        )));
    }
    let size = config.resize_to;
    let loaded = load_examples(&split.train, size);
    let mut train_set: Vec<Example> = loaded.iter().map(|(e, _)| e.clone()).collect();
    let test_set: Vec<Example> = load_examples(&split.test, size).into_iter().map(|(e, _)| e).collect();
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Dataset("training and test splits must both be non-empty".into()));
    }
    let originals = train_set.len();
    if config.augment {
        for ci in 0..split.classes.len() {
            let sources: Vec<Raster> = loaded
                .iter()
                .filter(|(e, _)| e.label == ci)
                .map(|(_, r)| r.clone())
                .collect();
            let mut rng = augment::class_rng(config.augment_config.seed, ci);
            for (_, _, img) in augment::augment_samples(&sources, config.augment_config.per_class_new, &config.augment_config, &mut rng) {
                train_set.push(Example {
                    image: img.to_tensor(),
                    label: ci,
                });
            }
        }
    }

    let (net, mut store) = build_network(&config.network, config.seed)?;
    let mut optimizer = Optimizer::new(config.optimizer, &store);
    info!(
        "training {} params on {} images ({} augmented), testing on {}",
        store.count_params(),
        train_set.len(),
        train_set.len() - originals,
        test_set.len()
    );

    let originals_view = &train_set[..originals];
    let mut records = Vec::with_capacity(config.epochs);
    let mut train_accuracy = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, labels) = batch_of(&train_set, chunk)?;
            let loss = train_step(&net, &mut store, &mut optimizer, x, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
        }
        let (accuracy, loss) = evaluate(&net, &store, &test_set, config.batch_size)?;
        let (train_acc, _) = evaluate(&net, &store, originals_view, config.batch_size)?;
        info!("epoch {epoch}: test accuracy {accuracy:.4} loss {loss:.4}, train accuracy {train_acc:.4}");
        records.push(EpochRecord { epoch, accuracy, loss });
        train_accuracy.push(train_acc);
        if best.as_ref().map_or(true, |(a, _)| accuracy > *a) {
            best = Some((accuracy, store.clone()));
        }
        if let Some(target) = config.stop_at_train_accuracy {
            if train_acc >= target && records.len() >= config.window {
                break;
            }
        }
    }
    let metrics = RunMetrics::from_records(records, config.window, train_accuracy)?;
    let best_store = best.map(|(_, s)| s).unwrap_or_else(|| store.clone());

    std::fs::create_dir_all(&config.out_dir)?;
    std::fs::write(config.out_dir.join(METRICS_FILE), metrics.to_tsv())?;
    checkpoint::save(&best_store, &config.out_dir.join(CHECKPOINT_FILE))?;
    std::fs::write(config.out_dir.join(NETWORK_FILE), config.network.to_config_string())?;
    Ok(TrainOutcome {
        metrics,
        network: net,
        final_store: store,
        best_store,
    })
}

/// Evaluate a checkpoint on every image of a class-per-directory dataset.
pub fn evaluate_checkpoint(network: &NetworkConfig, checkpoint_path: &Path, dataset: &Path) -> Result<(f64, f64, usize)> {
    let (net, mut store) = build_network(network, 0)?;
    store.load_from(&checkpoint::load(checkpoint_path)?)?;
    let mut samples = Vec::new();
    let classes = augment::class_dirs(dataset)?;
    if classes.len() != network.num_classes {
        return Err(Error::Dataset(format!(
            "dataset has {} classes, network expects {}",
            classes.len(),
            network.num_classes
        )));
    }
    for (ci, (_, dir)) in classes.iter().enumerate() {
        for path in augment::class_files(dir)? {
            samples.push(Sample { class_index: ci, path });
        }
    }
    let examples: Vec<Example> = load_examples(&samples, network.input_size).into_iter().map(|(e, _)| e).collect();
    let (acc, loss) = evaluate(&net, &store, &examples, 16)?;
    Ok((acc, loss, examples.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(acc: &[f64]) -> Vec<EpochRecord> {
        acc.iter()
            .enumerate()
            .map(|(epoch, &accuracy)| EpochRecord {
                epoch,
                accuracy,
                loss: 1.0 - accuracy,
            })
            .collect()
    }

    #[test]
    fn window_of_constant_series() {
        let (a, _) = window_average(&records(&[0.9; 10]), 10).unwrap();
        assert!((a - 0.9).abs() < 1e-15);
    }

    #[test]
    fn window_rejects_short_series() {
        assert!(matches!(
            window_average(&records(&[0.5; 3]), 10),
            Err(Error::TooFewRecords { window: 10, got: 3 })
        ));
    }

    #[test]
    fn sgd_first_step_closed_form() {
        let mut store = ParamStore::new();
        let id = store
            .add("p", Tensor::from_vec([1, 1, 1, 2], vec![1.0, -2.0]).unwrap(), true)
            .unwrap();
        let mut ctx = Ctx::new(&store, Mode::Train);
        let p = ctx.var(id);
        let sq = ctx.tape.mul(p, p).unwrap();
        let loss = ctx.tape.sum(sq);
        let grads = ctx.backward(loss).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1), &store);
        opt.step(&mut store, &grads);
        assert_eq!(store.get(id).data(), &[1.0 - 0.1 * 2.0, -2.0 - 0.1 * -4.0]);

        let mut frozen = Optimizer::new(OptimizerConfig::sgd(0.0), &store);
        let before = store.clone();
        frozen.step(&mut store, &grads);
        assert_eq!(store, before);
    }

    #[test]
    fn metrics_tsv_layout() {
        let m = RunMetrics::from_records(records(&[0.5, 0.75]), 2, vec![]).unwrap();
        assert_eq!(
            m.to_tsv(),
            "epoch\taccuracy\tloss\n0\t0.5\t0.5\n1\t0.75\t0.25\naccuracy_avg\t0.625\nloss_avg\t0.375\n"
        );
        assert_eq!(m.best_epoch, 1);
    }
}
