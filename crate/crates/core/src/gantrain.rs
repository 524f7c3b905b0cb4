//! Stage 1: adversarial pretraining of the conditional GAN.

use std::path::Path;

use gendistill_nn::{Adam, AdamConfig, Graph, Mode, ParamStore, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{build_discriminator, build_generator, Critic, DiscriminatorSpec, Generator, GeneratorSpec};
use crate::checkpoint::{CheckpointMeta, GeneratorCheckpoint, Stage};
use crate::data::{sample_mixed_batch, DatasetHandle, ImageBatch};
use crate::error::{config_err, Error, Result};
use crate::seed::{self, RngState};

/// Generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanLoss {
    /// Minimize `-log D(G(z|y)|y)`.
    #[default]
    NonSaturating,
    /// Minimize `log(1 - D(G(z|y)|y))`.
    Minimax,
}

impl std::str::FromStr for GanLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non_saturating" => Ok(GanLoss::NonSaturating),
            "minimax" => Ok(GanLoss::Minimax),
            _ => config_err("gan_loss", format!("expected non_saturating or minimax, got '{}'", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanTrainConfig {
    pub epochs: usize,
    /// Iterations per epoch; 0 means one pass over the split.
    pub iters_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub loss: GanLoss,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self { epochs: 25, iters_per_epoch: 0, batch_size: 64, lr: 2e-4, beta1: 0.5, beta2: 0.999, seed: 0, loss: GanLoss::NonSaturating }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return config_err("gan_epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return config_err("gan_batch", "must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config_err("gan_lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return config_err("gan_betas", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr, self.beta1, self.beta2)
    }

    pub fn iterations(&self, data_len: usize) -> usize {
        if self.iters_per_epoch > 0 {
            self.iters_per_epoch
        } else {
            (data_len / self.batch_size).max(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanLossRecord {
    pub epoch: usize,
    pub iter: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Position inside a run, carried by divergence errors.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepAt {
    pub epoch: usize,
    pub iter: usize,
}

fn diverged(at: StepAt, what: impl Into<String>) -> Error {
    Error::Divergence { epoch: at.epoch, iter: at.iter, what: what.into() }
}

/// Uniform labels over `num_classes` followed by standard normal noise.
pub fn draw_gan_inputs<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, num_classes: usize, noise_dim: usize) -> (Vec<usize>, Tensor<T>) {
    let labels = (0..n).map(|_| rng.random_range(0..num_classes)).collect();
    let z = Tensor::randn([n, noise_dim], 1.0, rng);
    (labels, z)
}

/// Generator-side adversarial loss of `fake` under a frozen critic.
pub fn adversarial_loss<'g, T: Real, C: Critic<T>>(
    g: &'g Graph<T>,
    critic: &C,
    critic_store: &ParamStore<T>,
    fake: Var<'g, T>,
    labels: &[usize],
    kind: GanLoss,
) -> Result<Var<'g, T>> {
    g.freeze(critic_store);
    let logits = critic.logits(g, critic_store, fake, labels)?;
    Ok(match kind {
        GanLoss::NonSaturating => logits.bce_with_logits(&vec![T::one(); labels.len()])?,
        GanLoss::Minimax => logits.bce_with_logits(&vec![T::zero(); labels.len()])?.scale(-1.0),
    })
}

/// One discriminator update on `real` against freshly generated fakes.
/// The generator store is only read.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_step<T: Real, C: Critic<T>, R: Rng + ?Sized>(
    critic: &C,
    critic_store: &mut ParamStore<T>,
    opt: &mut Adam<T>,
    gen: &Generator,
    gen_store: &ParamStore<T>,
    real: &ImageBatch,
    rng: &mut R,
    at: StepAt,
) -> Result<f64> {
    let n = real.len();
    let (labels, z) = draw_gan_inputs::<T, R>(rng, n, gen.spec.num_classes, gen.spec.noise_dim);
    let fake = gen.generate(gen_store, &z, &labels, Mode::Train)?;
    let g = Graph::new();
    let lr = critic.logits(&g, critic_store, g.constant(real.pixels.cast()), &real.labels)?;
    let lf = critic.logits(&g, critic_store, g.constant(fake), &labels)?;
    let loss = lr.bce_with_logits(&vec![T::one(); n])?.add(lf.bce_with_logits(&vec![T::zero(); n])?)?;
    let value = loss.value().item().as_f64();
    if !value.is_finite() {
        return Err(diverged(at, format!("discriminator loss {}", value)));
    }
    let grads = g.backward(loss)?;
    drop(g);
    opt.step(critic_store, &grads);
    Ok(value)
}

/// One generator update against a frozen critic on a uniform-label batch.
#[allow(clippy::too_many_arguments)]
pub fn generator_gan_step<T: Real, C: Critic<T>, R: Rng + ?Sized>(
    gen: &Generator,
    gen_store: &mut ParamStore<T>,
    opt: &mut Adam<T>,
    critic: &C,
    critic_store: &ParamStore<T>,
    batch_size: usize,
    kind: GanLoss,
    rng: &mut R,
    at: StepAt,
) -> Result<f64> {
    let (labels, z) = draw_gan_inputs::<T, R>(rng, batch_size, gen.spec.num_classes, gen.spec.noise_dim);
    let g = Graph::new();
    let fake = gen.forward(&g, gen_store, g.constant(z), &labels, Mode::Train)?;
    let loss = adversarial_loss(&g, critic, critic_store, fake, &labels, kind)?;
    let value = loss.value().item().as_f64();
    if !value.is_finite() {
        return Err(diverged(at, format!("generator loss {}", value)));
    }
    let grads = g.backward(loss)?;
    let updates = g.take_buffer_updates();
    drop(g);
    gen_store.apply_buffer_updates(updates)?;
    opt.step(gen_store, &grads);
    Ok(value)
}

/// Generator and discriminator shapes for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanArch {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl GanArch {
    pub fn new(channels: usize, num_classes: usize) -> Self {
        Self { generator: GeneratorSpec::new(channels, num_classes), discriminator: DiscriminatorSpec::new(channels, num_classes) }
    }
}

#[derive(Debug)]
pub struct GanOutcome {
    pub checkpoint: GeneratorCheckpoint,
    pub records: Vec<GanLossRecord>,
}

/// Trains the conditional GAN from scratch. On divergence the last good
/// state is written to `last_good` (when given) before the error returns.
pub fn pretrain_gan(
    data: &DatasetHandle,
    cfg: &GanTrainConfig,
    arch: &GanArch,
    meta: CheckpointMeta,
    last_good: Option<&Path>,
    on_record: &mut dyn FnMut(&GanLossRecord),
) -> Result<GanOutcome> {
    cfg.validate()?;
    if arch.generator.channels != data.channels() || arch.discriminator.channels != data.channels() {
        return config_err("channels", format!("dataset has {} channels, models expect {}", data.channels(), arch.generator.channels));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (gen, mut gen_store) = build_generator::<f32>(&arch.generator, seed::derive(cfg.seed, "gen_init", 0))?;
    let (disc, mut disc_store) = build_discriminator::<f32>(&arch.discriminator, seed::derive(cfg.seed, "disc_init", 0))?;
    let mut opt_g = Adam::new(cfg.adam());
    let mut opt_d = Adam::new(cfg.adam());
    let mut data_rng = seed::rng_for(cfg.seed, "gan_data");
    let mut noise_rng = seed::rng_for(cfg.seed, "gan_noise");
    let batch = cfg.batch_size.min(data.len());
    let iters = cfg.iterations(data.len());
    let mut records = Vec::new();

    let snapshot = |gen_store: &ParamStore<f32>, disc_store: &ParamStore<f32>, steps: u64, epoch: usize, rng: &seed::Rng| {
        let mut m = meta.clone();
        m.steps = steps;
        m.epoch = epoch;
        m.rng = Some(RngState::capture(rng));
        GeneratorCheckpoint {
            stage: Stage::Pretrained,
            spec: arch.generator.clone(),
            gen: gen_store.clone(),
            disc: Some((arch.discriminator.clone(), disc_store.clone())),
            meta: m,
        }
    };

    for epoch in 0..cfg.epochs {
        for iter in 0..iters {
            let at = StepAt { epoch, iter };
            let step = (|| -> Result<(f64, f64)> {
                let real = sample_mixed_batch(data, batch, &mut data_rng)?;
                let d = discriminator_step(&disc, &mut disc_store, &mut opt_d, &gen, &gen_store, &real, &mut noise_rng, at)?;
                let g = generator_gan_step(&gen, &mut gen_store, &mut opt_g, &disc, &disc_store, batch, cfg.loss, &mut noise_rng, at)?;
                Ok((d, g))
            })();
            match step {
                Ok((d_loss, g_loss)) => {
                    let rec = GanLossRecord { epoch, iter, d_loss, g_loss };
                    on_record(&rec);
                    records.push(rec);
                }
                Err(e) => {
                    if let Some(path) = last_good {
                        snapshot(&gen_store, &disc_store, opt_g.steps(), epoch, &noise_rng).save(path)?;
                    }
                    return Err(e);
                }
            }
        }
        log::info!("gan epoch {}/{} done", epoch + 1, cfg.epochs);
    }
    let checkpoint = snapshot(&gen_store, &disc_store, opt_g.steps(), cfg.epochs, &noise_rng);
    Ok(GanOutcome { checkpoint, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Discriminator;
    use crate::data::{synthetic, Split};

    fn tiny_arch() -> GanArch {
        let mut a = GanArch::new(1, 10);
        a.generator.width = 4;
        a.generator.noise_dim = 8;
        a.discriminator.width = 4;
        a
    }

    fn models(arch: &GanArch) -> (Generator, ParamStore<f32>, Discriminator, ParamStore<f32>) {
        let (g, gs) = build_generator(&arch.generator, 1).unwrap();
        let (d, ds) = build_discriminator(&arch.discriminator, 2).unwrap();
        (g, gs, d, ds)
    }

    #[test]
    fn untrained_discriminator_loss_is_near_two_log_two() {
        let arch = tiny_arch();
        let (g, gs, d, mut ds) = models(&arch);
        let data = synthetic(Split::Train, 8, 1, 0);
        let real = sample_mixed_batch(&data, 64, &mut seed::rng(0)).unwrap();
        let mut opt = Adam::new(AdamConfig::new(2e-4, 0.5, 0.999));
        let before = gs.fingerprint();
        let loss = discriminator_step(&d, &mut ds, &mut opt, &g, &gs, &real, &mut seed::rng(1), StepAt::default()).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 0.05, "{loss}");
        assert_eq!(gs.fingerprint(), before);
    }

    #[test]
    fn nan_input_is_reported_as_divergence() {
        let arch = tiny_arch();
        let (g, gs, d, mut ds) = models(&arch);
        let data = synthetic(Split::Train, 2, 1, 0);
        let mut real = sample_mixed_batch(&data, 4, &mut seed::rng(0)).unwrap();
        real.pixels.data_mut()[5] = f32::NAN;
        let mut opt = Adam::new(AdamConfig::new(2e-4, 0.5, 0.999));
        let before = ds.fingerprint();
        let err = discriminator_step(&d, &mut ds, &mut opt, &g, &gs, &real, &mut seed::rng(1), StepAt { epoch: 2, iter: 7 }).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 2, iter: 7, .. }));
        assert_eq!(ds.fingerprint(), before);
    }

    #[test]
    fn generator_step_updates_only_the_generator() {
        let arch = tiny_arch();
        let (g, mut gs, d, ds) = models(&arch);
        let mut opt = Adam::new(AdamConfig::new(2e-4, 0.5, 0.999));
        let (gb, db) = (gs.trainable_fingerprint(), ds.fingerprint());
        for kind in [GanLoss::NonSaturating, GanLoss::Minimax] {
            let loss = generator_gan_step(&g, &mut gs, &mut opt, &d, &ds, 8, kind, &mut seed::rng(3), StepAt::default()).unwrap();
            assert!(loss.is_finite());
        }
        assert_ne!(gs.trainable_fingerprint(), gb);
        assert_eq!(ds.fingerprint(), db);
    }

    #[test]
    fn generator_trajectory_is_reproducible() {
        let arch = tiny_arch();
        let run = || {
            let (g, mut gs, d, ds) = models(&arch);
            let mut opt = Adam::new(AdamConfig::new(2e-4, 0.5, 0.999));
            let mut rng = seed::rng(11);
            (0..10)
                .map(|_| generator_gan_step(&g, &mut gs, &mut opt, &d, &ds, 4, GanLoss::NonSaturating, &mut rng, StepAt::default()).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_epochs_is_a_config_error() {
        let cfg = GanTrainConfig { epochs: 0, ..Default::default() };
        let data = synthetic(Split::Train, 2, 1, 0);
        let err = pretrain_gan(&data, &cfg, &tiny_arch(), CheckpointMeta::default(), None, &mut |_| {}).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "gan_epochs"));
    }

    #[test]
    fn short_run_records_every_iteration() {
        let cfg = GanTrainConfig { epochs: 2, iters_per_epoch: 3, batch_size: 8, ..Default::default() };
        let data = synthetic(Split::Train, 4, 1, 0);
        let mut seen = 0;
        let out = pretrain_gan(&data, &cfg, &tiny_arch(), CheckpointMeta::default(), None, &mut |_| seen += 1).unwrap();
        assert_eq!(seen, 6);
        assert_eq!(out.records.len(), 6);
        assert_eq!(out.checkpoint.meta.steps, 6);
        assert!(out.records.iter().all(|r| r.d_loss.is_finite() && r.g_loss.is_finite()));
    }
}
