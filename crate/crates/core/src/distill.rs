//! Stage 2: refine the generator by matching logits (global) and tap
//! features (local) of real and synthetic class batches through randomly
//! initialized matcher networks, alongside the adversarial term.

use std::path::Path;

use gendistill_nn::{Adam, AdamConfig, Graph, Mode, ParamStore, Real, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{build_matcher, ArchId, Critic, Generator, Matcher, MatcherSpec};
use crate::checkpoint::{CheckpointMeta, GeneratorCheckpoint, Stage};
use crate::data::{sample_class_batch, sample_mixed_batch, DatasetHandle};
use crate::error::{config_err, Error, Result};
use crate::gantrain::{adversarial_loss, discriminator_step, draw_gan_inputs, GanLoss, StepAt};
use crate::seed::{self, RngState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub omega_g: f64,
    pub omega_l: f64,
    /// Real and synthetic images per class in each matching step.
    pub batch_per_class: usize,
    pub num_classes: usize,
    pub epochs: usize,
    pub iters: usize,
    /// Generator learning rate.
    pub lr: f64,
    /// Discriminator learning rate for the interleaved updates.
    pub disc_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Batch size of the adversarial term and discriminator updates.
    pub adv_batch: usize,
    pub gan_loss: GanLoss,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            omega_g: 0.01,
            omega_l: 0.001,
            batch_per_class: 64,
            num_classes: 10,
            epochs: 10,
            iters: 100,
            lr: 2e-5,
            disc_lr: 2e-5,
            beta1: 0.5,
            beta2: 0.999,
            adv_batch: 64,
            gan_loss: GanLoss::NonSaturating,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("omega_g", self.omega_g), ("omega_l", self.omega_l)] {
            if !(v >= 0.0 && v.is_finite()) {
                return config_err(field, format!("must be a finite value >= 0, got {}", v));
            }
        }
        for (field, v) in [
            ("batch_per_class", self.batch_per_class),
            ("num_classes", self.num_classes),
            ("epochs", self.epochs),
            ("iters", self.iters),
            ("adv_batch", self.adv_batch),
        ] {
            if v == 0 {
                return config_err(field, "must be at least 1");
            }
        }
        for (field, v) in [("lr", self.lr), ("disc_lr", self.disc_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return config_err(field, format!("must be positive, got {}", v));
            }
        }
        Ok(())
    }

    pub fn gen_adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr, self.beta1, self.beta2)
    }

    pub fn disc_adam(&self) -> AdamConfig {
        AdamConfig::new(self.disc_lr, self.beta1, self.beta2)
    }
}

/// Architectures a matcher is drawn from, with the redraw period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPool {
    pub members: Vec<MatcherSpec>,
    pub reinit_every: usize,
}

impl ModelPool {
    pub fn new(members: Vec<MatcherSpec>, reinit_every: usize) -> Result<Self> {
        let pool = Self { members, reinit_every };
        pool.validate()?;
        Ok(pool)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return config_err("pool", "model pool is empty");
        }
        if self.reinit_every == 0 {
            return config_err("reinit_every", "must be at least 1");
        }
        Ok(())
    }

    /// Uniformly selects a member and a fresh initialization seed.
    pub fn draw_spec<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(&MatcherSpec, u64)> {
        self.validate()?;
        let spec = &self.members[rng.random_range(0..self.members.len())];
        Ok((spec, rng.random()))
    }
}

/// A freshly initialized matcher drawn uniformly from the pool.
pub fn draw_matcher<T: Real, R: Rng + ?Sized>(pool: &ModelPool, rng: &mut R) -> Result<Matcher<T>> {
    let (spec, init_seed) = pool.draw_spec(rng)?;
    build_matcher(spec, init_seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchLossBreakdown {
    pub global: f64,
    pub local: f64,
    pub cgan: f64,
    pub total: f64,
}

fn sq_diff_sum<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(gendistill_nn::NnError::Shape { op, msg: format!("{:?} vs {:?}", a.shape(), b.shape()) }.into());
    }
    Ok(a.data().iter().zip(b.data()).map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2)).sum())
}

/// Sum of squared differences between class-grouped logits.
pub fn global_loss<T: Real>(logits_s: &Tensor<T>, logits_t: &Tensor<T>) -> Result<f64> {
    sq_diff_sum("global_loss", logits_s, logits_t)
}

/// Sum of squared differences between tap features.
pub fn local_loss<T: Real>(feat_s: &Tensor<T>, feat_t: &Tensor<T>) -> Result<f64> {
    sq_diff_sum("local_loss", feat_s, feat_t)
}

pub fn total_loss(global: f64, local: f64, cgan: f64, omega_g: f64, omega_l: f64) -> f64 {
    omega_g * global + omega_l * local + cgan
}

/// Matching losses and their gradient with respect to the synthetic images.
#[derive(Debug, Clone)]
pub struct MatchGrad<T> {
    pub global: f64,
    pub local: f64,
    pub grad: Tensor<T>,
}

/// Computes the weighted matching loss of class-major synthetic images
/// `(K·B, C, H, W)` against per-class real batches, pairing the i-th
/// synthetic image of class k with the i-th real image of class k. Each
/// class passes through the matcher separately in training mode, so
/// normalization statistics are per class batch. The matcher is only read.
pub fn matching_grad<T: Real>(
    matcher: &Matcher<T>,
    synth: &Tensor<T>,
    reals: &[Tensor<T>],
    omega_g: f64,
    omega_l: f64,
) -> Result<MatchGrad<T>> {
    let k = reals.len();
    if k == 0 || synth.dim(0) % k != 0 {
        return Err(Error::Usage(format!("{} synthetic images for {} classes", synth.dim(0), k)));
    }
    let b = synth.dim(0) / k;
    let (mut global, mut local) = (0.0, 0.0);
    let mut parts = Vec::with_capacity(k);
    for (c, real) in reals.iter().enumerate() {
        if real.shape() != &[b, synth.dim(1), synth.dim(2), synth.dim(3)][..] {
            return Err(Error::Usage(format!("real batch {:?} for class {} with {} synthetic", real.shape(), c, b)));
        }
        let gt = Graph::no_grad();
        let target = matcher.forward_with_features(&gt, gt.constant(real.clone()), Mode::Train)?;
        let (lt, ft) = (target.logits.to_tensor(), target.features.to_tensor());
        drop(gt);

        let gs = Graph::new();
        gs.freeze(&matcher.store);
        let x = gs.input(synth.narrow0(c * b, b)?);
        let out = matcher.forward_with_features(&gs, x, Mode::Train)?;
        let lg = out.logits.sum_sq_diff(gs.constant(lt))?;
        let ll = out.features.sum_sq_diff(gs.constant(ft))?;
        global += lg.value().item().as_f64();
        local += ll.value().item().as_f64();
        let loss = lg.scale(omega_g).add(ll.scale(omega_l))?;
        let grads = gs.backward(loss)?;
        parts.push(grads.wrt(x).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())));
    }
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    Ok(MatchGrad { global, local, grad: Tensor::cat0(&refs)? })
}

/// Independent random streams of stage 2.
#[derive(Debug, Clone)]
pub struct DistillRngs {
    /// Synthetic noise and real class batches for matching.
    pub matching: seed::Rng,
    /// Noise and labels of the adversarial term.
    pub adversarial: seed::Rng,
    /// Matcher draws.
    pub pool: seed::Rng,
    /// Real batches and fakes for discriminator updates.
    pub disc: seed::Rng,
}

impl DistillRngs {
    pub fn from_seed(s: u64) -> Self {
        Self {
            matching: seed::rng_for(s, "distill_matching"),
            adversarial: seed::rng_for(s, "distill_adversarial"),
            pool: seed::rng_for(s, "distill_pool"),
            disc: seed::rng_for(s, "distill_disc"),
        }
    }
}

/// One generator update on `ω_g·L_global + ω_l·L_local + L_CGAN`. The
/// matcher and critic are frozen; only the adversarial forward pass moves
/// the generator's running statistics.
#[allow(clippy::too_many_arguments)]
pub fn distill_step<T: Real, C: Critic<T>>(
    gen: &Generator,
    gen_store: &mut ParamStore<T>,
    opt: &mut Adam<T>,
    critic: &C,
    critic_store: &ParamStore<T>,
    matcher: &Matcher<T>,
    data: &DatasetHandle,
    cfg: &DistillConfig,
    rngs: &mut DistillRngs,
    at: StepAt,
) -> Result<MatchLossBreakdown> {
    let (k, b) = (cfg.num_classes, cfg.batch_per_class);
    let labels: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(c, b)).collect();
    let z = Tensor::<T>::randn([k * b, gen.spec.noise_dim], 1.0, &mut rngs.matching);
    let reals = (0..k)
        .map(|c| sample_class_batch(data, c, b, &mut rngs.matching).map(|batch| batch.pixels.cast::<T>()))
        .collect::<Result<Vec<_>>>()?;

    let g = Graph::new();
    let synth = gen.forward(&g, gen_store, g.constant(z), &labels, Mode::Train)?;
    g.take_buffer_updates();
    let m = matching_grad(matcher, &synth.value(), &reals, cfg.omega_g, cfg.omega_l)?;

    let (adv_labels, adv_z) = draw_gan_inputs::<T, _>(&mut rngs.adversarial, cfg.adv_batch, k, gen.spec.noise_dim);
    let fake = gen.forward(&g, gen_store, g.constant(adv_z), &adv_labels, Mode::Train)?;
    let cgan = adversarial_loss(&g, critic, critic_store, fake, &adv_labels, cfg.gan_loss)?;
    let cgan_value = cgan.value().item().as_f64();
    let total = total_loss(m.global, m.local, cgan_value, cfg.omega_g, cfg.omega_l);
    if !total.is_finite() {
        return Err(Error::Divergence { epoch: at.epoch, iter: at.iter, what: format!("total loss {}", total) });
    }
    let grads = g.backward_with(&[(synth, m.grad), (cgan, Tensor::scalar(T::one()))])?;
    let updates = g.take_buffer_updates();
    drop(g);
    gen_store.apply_buffer_updates(updates)?;
    opt.step(gen_store, &grads);
    Ok(MatchLossBreakdown { global: m.global, local: m.local, cgan: cgan_value, total })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillRecord {
    pub epoch: usize,
    pub iter: usize,
    pub arch: ArchId,
    pub global: f64,
    pub local: f64,
    pub cgan: f64,
    pub total: f64,
    pub d_loss: f64,
}

#[derive(Debug)]
pub struct DistillOutcome {
    pub checkpoint: GeneratorCheckpoint,
    pub records: Vec<DistillRecord>,
}

/// Runs stage 2 from a stage-1 checkpoint. Each iteration first updates the
/// carried-over discriminator once, then the generator once; a new matcher
/// is drawn every `pool.reinit_every` iterations.
pub fn distill(
    ckpt: &GeneratorCheckpoint,
    data: &DatasetHandle,
    pool: &ModelPool,
    cfg: &DistillConfig,
    meta: CheckpointMeta,
    last_good: Option<&Path>,
    on_record: &mut dyn FnMut(&DistillRecord),
) -> Result<DistillOutcome> {
    cfg.validate()?;
    pool.validate()?;
    if cfg.num_classes != ckpt.spec.num_classes || cfg.num_classes != data.num_classes() {
        return config_err("num_classes", "generator, data and config disagree on the class count");
    }
    if data.channels() != ckpt.spec.channels {
        return config_err("channels", format!("dataset has {} channels, generator {}", data.channels(), ckpt.spec.channels));
    }
    for m in &pool.members {
        if m.channels != data.channels() || m.num_classes != cfg.num_classes {
            return config_err("pool", format!("{} expects {} channels and {} classes", m.arch, m.channels, m.num_classes));
        }
    }
    let (gen, mut gen_store) = ckpt.generator::<f32>()?;
    let (disc, mut disc_store) = ckpt.discriminator::<f32>()?;
    let disc_spec = ckpt.disc.as_ref().map(|(s, _)| s.clone()).expect("discriminator checked above");
    let mut opt_g = Adam::new(cfg.gen_adam());
    let mut opt_d = Adam::new(cfg.disc_adam());
    let mut rngs = DistillRngs::from_seed(cfg.seed);
    let adv_real = cfg.adv_batch.min(data.len());
    let base_steps = ckpt.meta.steps;
    let mut records = Vec::new();
    let mut matcher: Option<Matcher<f32>> = None;
    let mut step = 0usize;

    let snapshot = |gen_store: &ParamStore<f32>, disc_store: &ParamStore<f32>, steps: u64, epoch: usize, rng: &seed::Rng| {
        let mut m = meta.clone();
        m.steps = base_steps + steps;
        m.epoch = epoch;
        m.rng = Some(RngState::capture(rng));
        GeneratorCheckpoint {
            stage: Stage::Distilled,
            spec: ckpt.spec.clone(),
            gen: gen_store.clone(),
            disc: Some((disc_spec.clone(), disc_store.clone())),
            meta: m,
        }
    };

    for epoch in 0..cfg.epochs {
        for iter in 0..cfg.iters {
            let at = StepAt { epoch, iter };
            let result = (|| -> Result<DistillRecord> {
                if step % pool.reinit_every == 0 || matcher.is_none() {
                    matcher = Some(draw_matcher(pool, &mut rngs.pool)?);
                }
                let mt = matcher.as_ref().unwrap();
                let real = sample_mixed_batch(data, adv_real, &mut rngs.disc)?;
                let d_loss = discriminator_step(&disc, &mut disc_store, &mut opt_d, &gen, &gen_store, &real, &mut rngs.disc, at)?;
                let bd = distill_step(&gen, &mut gen_store, &mut opt_g, &disc, &disc_store, mt, data, cfg, &mut rngs, at)?;
                Ok(DistillRecord {
                    epoch,
                    iter,
                    arch: mt.spec.arch,
                    global: bd.global,
                    local: bd.local,
                    cgan: bd.cgan,
                    total: bd.total,
                    d_loss,
                })
            })();
            match result {
                Ok(rec) => {
                    on_record(&rec);
                    records.push(rec);
                }
                Err(e) => {
                    if let Some(path) = last_good {
                        snapshot(&gen_store, &disc_store, opt_g.steps(), epoch, &rngs.matching).save(path)?;
                    }
                    return Err(e);
                }
            }
            step += 1;
        }
        log::info!("distill epoch {}/{} done", epoch + 1, cfg.epochs);
    }
    let checkpoint = snapshot(&gen_store, &disc_store, opt_g.steps(), cfg.epochs, &rngs.matching);
    Ok(DistillOutcome { checkpoint, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force `Σ_k Σ_b Σ_j (s - t)²` over class-grouped rows.
    fn oracle(s: &[f64], t: &[f64], k: usize, b: usize, d: usize) -> f64 {
        let mut acc = 0.0;
        for kk in 0..k {
            for bb in 0..b {
                for j in 0..d {
                    let i = (kk * b + bb) * d + j;
                    acc += (s[i] - t[i]) * (s[i] - t[i]);
                }
            }
        }
        acc
    }

    #[test]
    fn global_loss_worked_example() {
        let s = Tensor::<f64>::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let t = Tensor::<f64>::zeros([2, 2]);
        assert_eq!(global_loss(&s, &t).unwrap(), 2.0);
        assert_eq!(global_loss(&t, &s).unwrap(), 2.0);
        assert_eq!(global_loss(&s, &s).unwrap(), 0.0);
        assert!(global_loss(&s, &Tensor::zeros([4])).is_err());
    }

    #[test]
    fn local_loss_of_ones_against_zeros_counts_elements() {
        let s = Tensor::<f32>::ones([3, 4, 2, 2]);
        let t = Tensor::<f32>::zeros([3, 4, 2, 2]);
        assert_eq!(local_loss(&s, &t).unwrap(), 48.0);
        assert_eq!(local_loss(&s.scale(3.0), &t.scale(3.0)).unwrap(), 9.0 * 48.0);
    }

    #[test]
    fn total_loss_examples() {
        assert!((total_loss(2.0, 4.0, 0.5, 0.01, 0.001) - 0.524).abs() < 1e-12);
        assert_eq!(total_loss(123.0, 456.0, 0.7, 0.0, 0.0), 0.7);
    }

    #[test]
    fn pool_validation() {
        assert!(ModelPool::new(vec![], 1).is_err());
        let spec = MatcherSpec::new(ArchId::ConvNet3, 10, 1);
        assert!(ModelPool::new(vec![spec.clone()], 0).is_err());
        let pool = ModelPool::new(vec![spec], 1).unwrap();
        let mut rng = seed::rng(0);
        let (a, s1) = pool.draw_spec(&mut rng).unwrap();
        let (b, s2) = pool.draw_spec(&mut rng).unwrap();
        assert_eq!(a.arch, b.arch);
        assert_ne!(s1, s2);
    }

    #[test]
    fn config_rejects_negative_weights() {
        let cfg = DistillConfig { omega_l: -1.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config { ref field, .. }) if field == "omega_l"));
        assert!(DistillConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn losses_match_brute_force(k in 1usize..=10, b in 1usize..=8, d in 1usize..=256, s in 0u64..1_000_000) {
            let mut rng = seed::rng(s);
            let a = Tensor::<f64>::randn([k * b, d], 2.0, &mut rng);
            let c = Tensor::<f64>::randn([k * b, d], 2.0, &mut rng);
            let expect = oracle(a.data(), c.data(), k, b, d);
            let g = global_loss(&a, &c).unwrap();
            let l = local_loss(&a, &c).unwrap();
            prop_assert!((g - expect).abs() <= 1e-6 * expect.abs().max(1e-12));
            prop_assert!((l - expect).abs() <= 1e-6 * expect.abs().max(1e-12));
            prop_assert!(g >= 0.0);
            prop_assert_eq!(global_loss(&a, &a).unwrap(), 0.0);
        }
    }
}
