//! Measurement protocols: train fresh classifiers on distilled data and test
//! them on the real test split.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use gendistill_nn::{Adam, AdamConfig, Graph, Mode, NnError, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{build_matcher, ArchId, Matcher, MatcherSpec};
use crate::checkpoint::{CheckpointMeta, GeneratorCheckpoint};
use crate::data::{DatasetHandle, ImageBatch, IMAGE_SIZE};
use crate::deploy::{Deployer, DistilledDataset};
use crate::distill::{distill, DistillConfig, ModelPool};
use crate::error::{config_err, Error, Result};
use crate::seed;

/// Architectures accepted by [`cross_architecture`].
pub const CROSS_ARCHS: [ArchId; 4] = [ArchId::ConvNet3, ArchId::ResNet18, ArchId::AlexNet, ArchId::Vgg11];

/// Global-loss weight held fixed during the ω_l sweep.
pub const ABLATION_OMEGA_G: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRunConfig {
    pub arch: ArchId,
    /// Per-architecture width overrides; missing entries use the default.
    #[serde(default)]
    pub widths: BTreeMap<ArchId, usize>,
    /// Upper bound on training epochs.
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Epochs without a 0.1% improvement of the training loss before stopping.
    pub patience: usize,
    /// Random ±2 px translations during training.
    pub augment: bool,
    /// Reuse one distilled set for every repeat instead of regenerating.
    pub fixed_set: bool,
}

impl Default for EvalRunConfig {
    fn default() -> Self {
        Self {
            arch: ArchId::ConvNet3,
            widths: BTreeMap::new(),
            epochs: 300,
            lr: 1e-3,
            batch_size: 256,
            repeats: 5,
            seed: 0,
            patience: 20,
            augment: false,
            fixed_set: false,
        }
    }
}

impl EvalRunConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("eval_epochs", self.epochs), ("eval_batch", self.batch_size), ("repeats", self.repeats), ("patience", self.patience)] {
            if v == 0 {
                return config_err(field, "must be at least 1");
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config_err("eval_lr", format!("must be positive, got {}", self.lr));
        }
        if let Some((a, _)) = self.widths.iter().find(|(_, &w)| w == 0) {
            return config_err("widths", format!("width for {} must be at least 1", a));
        }
        Ok(())
    }

    pub fn spec_for(&self, arch: ArchId, num_classes: usize, channels: usize) -> MatcherSpec {
        MatcherSpec::new(arch, num_classes, channels).with_width(self.widths.get(&arch).copied())
    }

    pub fn data_seed(&self, repeat: usize) -> u64 {
        seed::derive(self.seed, "distilled_set", if self.fixed_set { 0 } else { repeat as u64 })
    }

    pub fn train_seed(&self, repeat: usize) -> u64 {
        seed::derive(self.seed, "eval_repeat", repeat as u64)
    }
}

/// Anything that maps `(N, C, 32, 32)` images to class predictions.
pub trait Classifier {
    fn input_channels(&self) -> usize;
    fn predict(&self, pixels: &Tensor<f32>) -> Result<Vec<usize>>;
}

impl Classifier for Matcher<f32> {
    fn input_channels(&self) -> usize {
        self.spec.channels
    }

    fn predict(&self, pixels: &Tensor<f32>) -> Result<Vec<usize>> {
        Matcher::predict(self, pixels)
    }
}

#[derive(Debug)]
pub struct TrainedClassifier {
    pub model: Matcher<f32>,
    pub epochs_run: usize,
    pub steps: u64,
    pub final_loss: f64,
}

/// Shifts each image by up to `max_shift` pixels in both axes, filling with
/// the background value -1.
pub fn translate<R: Rng + ?Sized>(pixels: &Tensor<f32>, max_shift: i64, rng: &mut R) -> Tensor<f32> {
    let (n, c) = (pixels.dim(0), pixels.dim(1));
    let s = IMAGE_SIZE as i64;
    let mut out = Tensor::full(pixels.shape().to_vec(), -1.0f32);
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    for i in 0..n {
        let dx = rng.random_range(-max_shift..=max_shift);
        let dy = rng.random_range(-max_shift..=max_shift);
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            for y in 0..s {
                let sy = y - dy;
                if !(0..s).contains(&sy) {
                    continue;
                }
                for x in 0..s {
                    let sx = x - dx;
                    if (0..s).contains(&sx) {
                        out.data_mut()[base + (y * s + x) as usize] = pixels.data()[base + (sy * s + sx) as usize];
                    }
                }
            }
        }
    }
    out
}

/// Trains a freshly initialized classifier on `batch` alone.
pub fn train_classifier(batch: &ImageBatch, spec: &MatcherSpec, cfg: &EvalRunConfig, seed: u64) -> Result<TrainedClassifier> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = build_matcher::<f32>(spec, seed::derive(seed, "eval_init", 0))?;
    let mut rng = seed::rng_for(seed, "eval_train");
    let mut opt = Adam::new(AdamConfig::new(cfg.lr, 0.9, 0.999));
    let n = batch.len();
    let mut order: Vec<usize> = (0..n).collect();
    let (mut best, mut stale, mut last) = (f64::INFINITY, 0usize, f64::NAN);
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (iter, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut x = batch.pixels.select0(idx)?;
            if cfg.augment {
                x = translate(&x, 2, &mut rng);
            }
            let y: Vec<usize> = idx.iter().map(|&i| batch.labels[i]).collect();
            let g = Graph::new();
            let out = model.forward_with_features(&g, g.constant(x), Mode::Train)?;
            let loss = out.logits.cross_entropy(&y)?;
            let lv = loss.value().item() as f64;
            if !lv.is_finite() {
                return Err(Error::Divergence { epoch, iter, what: format!("classifier loss {} ({} on {})", lv, spec.arch, n) });
            }
            total += lv * idx.len() as f64;
            let grads = g.backward(loss)?;
            let updates = g.take_buffer_updates();
            drop(g);
            model.store.apply_buffer_updates(updates)?;
            opt.step(&mut model.store, &grads);
        }
        last = total / n as f64;
        epochs_run = epoch + 1;
        if last < best * (1.0 - 1e-3) {
            best = last;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    log::debug!("{} trained {} epochs on {} images, loss {:.4}", spec.arch, epochs_run, n, last);
    Ok(TrainedClassifier { model, epochs_run, steps: opt.steps(), final_loss: last })
}

/// Trains on the distilled set only; the real data is never reachable here.
pub fn train_from_scratch(ds: &DistilledDataset, arch: ArchId, cfg: &EvalRunConfig, seed: u64) -> Result<TrainedClassifier> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let spec = cfg.spec_for(arch, ds.num_classes, ds.channels());
    train_classifier(&ds.as_batch()?, &spec, cfg, seed)
}

/// Fraction of top-1 correct predictions over the whole split.
pub fn evaluate_accuracy(model: &dyn Classifier, test: &DatasetHandle) -> Result<f64> {
    if model.input_channels() != test.channels() {
        return Err(NnError::Shape {
            op: "evaluate_accuracy",
            msg: format!("model expects {} channels, test images have {}", model.input_channels(), test.channels()),
        }
        .into());
    }
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let mut start = 0;
    while start < test.len() {
        let len = 500.min(test.len() - start);
        let b = test.range(start, len)?;
        let pred = model.predict(&b.pixels)?;
        correct += pred.iter().zip(&b.labels).filter(|(p, y)| p == y).count();
        start += len;
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn aggregate(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub ipc: usize,
    pub arch: ArchId,
    pub omega_l: Option<f64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Identifier of the generator that produced the evaluated sets.
    pub checkpoint: String,
    /// Distilled-set seed of each repeat.
    pub data_seeds: Vec<u64>,
}

impl EvalReport {
    pub fn new(dataset: &str, ipc: usize, arch: ArchId, accuracies: Vec<f64>, checkpoint: &str, data_seeds: Vec<u64>) -> Self {
        let (mean, std) = aggregate(&accuracies);
        Self { dataset: dataset.into(), ipc, arch, omega_l: None, accuracies, mean, std, checkpoint: checkpoint.into(), data_seeds }
    }

    /// True when mean and std equal a recomputation from the stored list.
    pub fn is_consistent(&self) -> bool {
        let (m, s) = aggregate(&self.accuracies);
        m == self.mean && s == self.std && self.accuracies.iter().all(|a| (0.0..=1.0).contains(a))
    }
}

/// Runs `cfg.repeats` repeats; each repeat generates one distilled set and
/// trains every architecture in `archs` on it.
fn run_repeats(
    deployer: &Deployer,
    test: &DatasetHandle,
    ipc: usize,
    archs: &[ArchId],
    cfg: &EvalRunConfig,
    on_result: &mut dyn FnMut(ArchId, usize, f64),
) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    if deployer.num_classes() != test.num_classes() {
        return config_err("dataset", format!("generator has {} classes, test split {}", deployer.num_classes(), test.num_classes()));
    }
    let mut accs: Vec<Vec<f64>> = vec![Vec::new(); archs.len()];
    let mut seeds = Vec::new();
    let mut provenance = None;
    for r in 0..cfg.repeats {
        let ds = deployer.generate(ipc, cfg.data_seed(r))?;
        seeds.push(ds.provenance.seed);
        for (a, &arch) in archs.iter().enumerate() {
            let trained = train_from_scratch(&ds, arch, cfg, cfg.train_seed(r))?;
            let acc = evaluate_accuracy(&trained.model, test)?;
            log::info!("{} ipc={} repeat {}/{}: {:.4} ({} epochs)", arch, ipc, r + 1, cfg.repeats, acc, trained.epochs_run);
            on_result(arch, r, acc);
            accs[a].push(acc);
        }
        provenance = Some(ds.provenance);
    }
    let p = provenance.expect("repeats >= 1");
    Ok(archs
        .iter()
        .zip(accs)
        .map(|(&arch, a)| EvalReport::new(&test.name().to_string(), ipc, arch, a, &p.checkpoint, seeds.clone()))
        .collect())
}

/// Accuracy of `cfg.arch` trained on distilled sets of size `ipc`.
pub fn benchmark(ckpt: &GeneratorCheckpoint, test: &DatasetHandle, ipc: usize, cfg: &EvalRunConfig) -> Result<EvalReport> {
    let deployer = Deployer::new(ckpt)?;
    Ok(run_repeats(&deployer, test, ipc, &[cfg.arch], cfg, &mut |_, _, _| {})?.remove(0))
}

/// One report per architecture, all trained on the same distilled sets.
pub fn cross_architecture(
    ckpt: &GeneratorCheckpoint,
    test: &DatasetHandle,
    ipc: usize,
    archs: &[ArchId],
    cfg: &EvalRunConfig,
) -> Result<Vec<EvalReport>> {
    if archs.is_empty() {
        return config_err("archs", "at least one architecture is required");
    }
    if let Some(a) = archs.iter().find(|a| !CROSS_ARCHS.contains(a)) {
        return Err(Error::UnsupportedArch(format!("{} (cross-architecture runs accept convnet3, resnet18, alexnet, vgg11)", a)));
    }
    let deployer = Deployer::new(ckpt)?;
    run_repeats(&deployer, test, ipc, archs, cfg, &mut |_, _, _| {})
}

#[derive(Debug)]
pub struct AblationResult {
    pub omega_l: f64,
    pub report: EvalReport,
    pub checkpoint: GeneratorCheckpoint,
}

/// Runs stage 2 from `stage1` once per ω_l value (ω_g fixed at
/// [`ABLATION_OMEGA_G`], everything else from `base`) and benchmarks each
/// result. Output order follows `values`.
#[allow(clippy::too_many_arguments)]
pub fn ablate_local_weight(
    stage1: &GeneratorCheckpoint,
    train: &DatasetHandle,
    test: &DatasetHandle,
    ipc: usize,
    values: &[f64],
    base: &DistillConfig,
    pool: &ModelPool,
    eval: &EvalRunConfig,
    meta: &CheckpointMeta,
) -> Result<Vec<AblationResult>> {
    if values.is_empty() {
        return config_err("omega_l_values", "at least one value is required");
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return config_err("omega_l_values", format!("values must be finite and >= 0, got {}", v));
    }
    let mut out = Vec::with_capacity(values.len());
    for &w in values {
        let cfg = DistillConfig { omega_g: ABLATION_OMEGA_G, omega_l: w, ..base.clone() };
        log::info!("ablation: distilling with omega_l={}", w);
        let outcome = distill(stage1, train, pool, &cfg, meta.clone(), None, &mut |_| {})?;
        let mut report = benchmark(&outcome.checkpoint, test, ipc, eval)?;
        report.omega_l = Some(w);
        out.push(AblationResult { omega_l: w, report, checkpoint: outcome.checkpoint });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRow {
    pub dataset: String,
    pub ipc: usize,
    pub arch: ArchId,
    pub omega_l: Option<f64>,
    pub repeat: usize,
    pub accuracy: f64,
    pub data_seed: u64,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub ipc: usize,
    pub arch: ArchId,
    pub omega_l: Option<f64>,
    pub repeats: usize,
    pub mean: f64,
    pub std: f64,
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

/// One row per (report, repeat) with full-precision accuracies.
pub fn write_repeats_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        for (i, &acc) in r.accuracies.iter().enumerate() {
            w.serialize(RepeatRow {
                dataset: r.dataset.clone(),
                ipc: r.ipc,
                arch: r.arch,
                omega_l: r.omega_l,
                repeat: i,
                accuracy: acc,
                data_seed: r.data_seeds.get(i).copied().unwrap_or_default(),
                checkpoint: r.checkpoint.clone(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(SummaryRow {
            dataset: r.dataset.clone(),
            ipc: r.ipc,
            arch: r.arch,
            omega_l: r.omega_l,
            repeats: r.accuracies.len(),
            mean: r.mean,
            std: r.std,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds reports from a per-repeat CSV, grouping rows by
/// (dataset, ipc, arch, omega_l, checkpoint) in order of first appearance.
pub fn read_repeats_csv(path: &Path) -> Result<Vec<EvalReport>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Load { path: path.to_path_buf(), msg: e.to_string() })?;
    let mut groups: Vec<(RepeatRow, Vec<f64>, Vec<u64>)> = Vec::new();
    for row in rdr.deserialize() {
        let row: RepeatRow = row?;
        let same = |g: &RepeatRow| {
            g.dataset == row.dataset
                && g.ipc == row.ipc
                && g.arch == row.arch
                && g.omega_l.map(f64::to_bits) == row.omega_l.map(f64::to_bits)
                && g.checkpoint == row.checkpoint
        };
        match groups.iter_mut().find(|(g, _, _)| same(g)) {
            Some((_, accs, seeds)) => {
                accs.push(row.accuracy);
                seeds.push(row.data_seed);
            }
            None => {
                let (a, s) = (row.accuracy, row.data_seed);
                groups.push((row, vec![a], vec![s]));
            }
        }
    }
    Ok(groups
        .into_iter()
        .map(|(g, accs, seeds)| {
            let mut r = EvalReport::new(&g.dataset, g.ipc, g.arch, accs, &g.checkpoint, seeds);
            r.omega_l = g.omega_l;
            r
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_generator, GeneratorSpec};
    use crate::checkpoint::Stage;
    use crate::data::{synthetic, DatasetName, Split};

    struct Constant(usize);

    impl Classifier for Constant {
        fn input_channels(&self) -> usize {
            1
        }
        fn predict(&self, pixels: &Tensor<f32>) -> Result<Vec<usize>> {
            Ok(vec![self.0; pixels.dim(0)])
        }
    }

    /// Predicts the label stored for each exact image.
    struct Memorizer(Vec<(Vec<u32>, usize)>);

    impl Classifier for Memorizer {
        fn input_channels(&self) -> usize {
            1
        }
        fn predict(&self, pixels: &Tensor<f32>) -> Result<Vec<usize>> {
            let row = pixels.row_len();
            Ok(pixels
                .data()
                .chunks(row)
                .map(|img| {
                    let key: Vec<u32> = img.iter().map(|v| v.to_bits()).collect();
                    self.0.iter().find(|(k, _)| *k == key).map(|(_, y)| *y).unwrap_or(0)
                })
                .collect())
        }
    }

    #[test]
    fn constant_classifier_scores_chance() {
        let test = synthetic(Split::Test, 7, 1, 3);
        for k in [0, 5, 9] {
            assert_eq!(evaluate_accuracy(&Constant(k), &test).unwrap(), 0.1);
        }
    }

    #[test]
    fn memorizer_scores_one_in_any_order() {
        let test = synthetic(Split::Test, 4, 1, 3);
        let all = test.range(0, test.len()).unwrap();
        let mut table: Vec<(Vec<u32>, usize)> = all
            .pixels
            .data()
            .chunks(all.pixels.row_len())
            .zip(&all.labels)
            .map(|(img, &y)| (img.iter().map(|v| v.to_bits()).collect(), y))
            .collect();
        assert_eq!(evaluate_accuracy(&Memorizer(table.clone()), &test).unwrap(), 1.0);
        table.reverse();
        let mut perm: Vec<usize> = (0..test.len()).collect();
        perm.reverse();
        let shuffled = test.batch(&perm).unwrap();
        let reversed = DatasetHandle::from_parts(
            DatasetName::Synthetic,
            Split::Test,
            1,
            shuffled.pixels.data().to_vec(),
            shuffled.labels.iter().map(|&l| l as u8).collect(),
        )
        .unwrap();
        assert_eq!(evaluate_accuracy(&Memorizer(table), &reversed).unwrap(), 1.0);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let test = synthetic(Split::Test, 2, 3, 0);
        assert!(matches!(evaluate_accuracy(&Constant(0), &test), Err(Error::Nn(NnError::Shape { .. }))));
    }

    #[test]
    fn aggregate_uses_sample_std() {
        let (m, s) = aggregate(&[0.97, 0.98, 0.99]);
        assert!((m - 0.98).abs() < 1e-15);
        assert!((s - 0.01).abs() < 1e-12);
        assert_eq!(aggregate(&[0.5]), (0.5, 0.0));
    }

    #[test]
    fn translate_keeps_shape_and_background() {
        let x = Tensor::<f32>::ones([3, 1, 32, 32]);
        let y = translate(&x, 2, &mut seed::rng(1));
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| v == 1.0 || v == -1.0));
        assert_eq!(translate(&x, 0, &mut seed::rng(1)), x);
    }

    fn tiny_ckpt() -> GeneratorCheckpoint {
        let spec = GeneratorSpec { width: 4, noise_dim: 8, ..GeneratorSpec::new(1, 10) };
        let (_, gen) = build_generator::<f32>(&spec, 3).unwrap();
        GeneratorCheckpoint { stage: Stage::Distilled, spec, gen, disc: None, meta: CheckpointMeta::default() }
    }

    fn quick_cfg() -> EvalRunConfig {
        let mut widths = BTreeMap::new();
        widths.insert(ArchId::ConvNet3, 4);
        EvalRunConfig { epochs: 3, repeats: 2, widths, ..Default::default() }
    }

    #[test]
    fn ipc_one_training_is_deterministic() {
        let ds = crate::deploy::generate_distilled(&tiny_ckpt(), 1, 0).unwrap();
        let test = synthetic(Split::Test, 3, 1, 1);
        let a = train_from_scratch(&ds, ArchId::ConvNet3, &quick_cfg(), 5).unwrap();
        let b = train_from_scratch(&ds, ArchId::ConvNet3, &quick_cfg(), 5).unwrap();
        assert_eq!(a.model.store.fingerprint(), b.model.store.fingerprint());
        assert_eq!(evaluate_accuracy(&a.model, &test).unwrap(), evaluate_accuracy(&b.model, &test).unwrap());
    }

    #[test]
    fn cross_architecture_rejects_resnet10() {
        let test = synthetic(Split::Test, 1, 1, 1);
        let err = cross_architecture(&tiny_ckpt(), &test, 1, &[ArchId::ResNet10], &quick_cfg()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedArch(_)));
    }

    #[test]
    fn benchmark_report_is_consistent() {
        let test = synthetic(Split::Test, 2, 1, 1);
        let r = benchmark(&tiny_ckpt(), &test, 1, &quick_cfg()).unwrap();
        assert_eq!(r.accuracies.len(), 2);
        assert_ne!(r.data_seeds[0], r.data_seeds[1]);
        assert!(r.is_consistent());
        let fixed = EvalRunConfig { fixed_set: true, ..quick_cfg() };
        let r = benchmark(&tiny_ckpt(), &test, 1, &fixed).unwrap();
        assert_eq!(r.data_seeds[0], r.data_seeds[1]);
    }

    #[test]
    fn csv_round_trip_reaggregates_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = EvalReport::new("mnist", 10, ArchId::ConvNet3, vec![0.9871, 0.9893, 0.9850000000000001], "abc", vec![1, 2, 3]);
        let mut b = EvalReport::new("mnist", 1, ArchId::ConvNet3, vec![0.1, 0.7], "abc", vec![4, 5]);
        b.omega_l = Some(1e-3);
        a.omega_l = None;
        let path = dir.path().join("repeats.csv");
        write_repeats_csv(&[a.clone(), b.clone()], &path).unwrap();
        assert_eq!(read_repeats_csv(&path).unwrap(), vec![a, b]);
    }
}
