//! Flat run configuration. Layers, lowest first: built-in defaults, the
//! budget preset, the config file, `GENDISTILL_DATA_DIR`, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use gendistill::arch::{ArchId, MatcherSpec};
use gendistill::data::DatasetName;
use gendistill::distill::{DistillConfig, ModelPool};
use gendistill::evalharness::EvalRunConfig;
use gendistill::gantrain::{GanArch, GanLoss, GanTrainConfig};
use gendistill::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DATA_DIR_ENV: &str = "GENDISTILL_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    /// Seconds; exercises every code path on tiny models.
    Smoke,
    /// Reduced widths and schedules for a single CPU or consumer GPU.
    Desk,
    /// Full default schedule.
    Paper,
}

impl Budget {
    /// Keys the preset sets on top of the defaults.
    pub fn overrides(self) -> toml::Table {
        let text = match self {
            Budget::Smoke => {
                r#"
                gen_width = 4
                disc_width = 4
                noise_dim = 16
                gan_epochs = 1
                gan_iters = 4
                gan_batch = 16
                batch_per_class = 2
                adv_batch = 8
                epochs = 1
                iters = 3
                widths = "convnet3=4,resnet10=2,resnet18=2,alexnet=2,vgg11=2"
                eval_epochs = 2
                eval_batch = 64
                repeats = 2
                "#
            }
            Budget::Desk => {
                r#"
                gen_width = 32
                disc_width = 32
                gan_epochs = 3
                batch_per_class = 16
                adv_batch = 64
                epochs = 4
                iters = 50
                lr = 2e-4
                disc_lr = 2e-4
                widths = "convnet3=32,resnet10=16,resnet18=16,alexnet=16,vgg11=16"
                eval_epochs = 300
                "#
            }
            Budget::Paper => "",
        };
        text.parse().expect("budget presets are valid TOML")
    }
}

/// Every setting of every stage. Keys mirror the long flags with `-`
/// replaced by `_`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub dataset: String,
    pub seed: u64,
    pub data_dir: PathBuf,
    /// Zeroes wall-clock timestamps so reruns produce identical files.
    pub deterministic: bool,

    pub noise_dim: usize,
    pub gen_width: usize,
    pub disc_width: usize,
    pub gan_epochs: usize,
    /// Iterations per GAN epoch; 0 means one pass over the training split.
    pub gan_iters: usize,
    pub gan_batch: usize,
    pub gan_lr: f64,
    pub gan_loss: String,

    pub omega_g: f64,
    pub omega_l: f64,
    pub batch_per_class: usize,
    pub epochs: usize,
    pub iters: usize,
    pub lr: f64,
    pub disc_lr: f64,
    pub adv_batch: usize,
    pub pool: String,
    pub reinit_every: usize,
    /// Width overrides, e.g. `convnet3=32,resnet18=16`.
    pub widths: String,
    /// Tap overrides, e.g. `resnet10=conv2`.
    pub taps: String,

    pub ipc: usize,
    pub eval_arch: String,
    pub eval_epochs: usize,
    pub eval_lr: f64,
    pub eval_batch: usize,
    pub repeats: usize,
    pub patience: usize,
    pub augment: bool,
    pub fixed_set: bool,
    pub archs: String,
    pub omega_l_values: String,
}

impl Default for Config {
    fn default() -> Self {
        let gan = GanTrainConfig::default();
        let dist = DistillConfig::default();
        let eval = EvalRunConfig::default();
        Self {
            dataset: "mnist".into(),
            seed: 0,
            data_dir: PathBuf::from("data"),
            deterministic: false,
            noise_dim: 100,
            gen_width: 64,
            disc_width: 64,
            gan_epochs: gan.epochs,
            gan_iters: gan.iters_per_epoch,
            gan_batch: gan.batch_size,
            gan_lr: gan.lr,
            gan_loss: "non_saturating".into(),
            omega_g: dist.omega_g,
            omega_l: dist.omega_l,
            batch_per_class: dist.batch_per_class,
            epochs: dist.epochs,
            iters: dist.iters,
            lr: dist.lr,
            disc_lr: dist.disc_lr,
            adv_batch: dist.adv_batch,
            pool: "convnet3,resnet10,resnet18".into(),
            reinit_every: 1,
            widths: String::new(),
            taps: String::new(),
            ipc: 10,
            eval_arch: "convnet3".into(),
            eval_epochs: eval.epochs,
            eval_lr: eval.lr,
            eval_batch: eval.batch_size,
            repeats: eval.repeats,
            patience: eval.patience,
            augment: eval.augment,
            fixed_set: eval.fixed_set,
            archs: "convnet3,resnet18,alexnet,vgg11".into(),
            omega_l_values: "0,1e-4,1e-3,1e-2,1e-1".into(),
        }
    }
}

fn cfg_err(field: &str, msg: impl Into<String>) -> anyhow::Error {
    Error::Config { field: field.into(), msg: msg.into() }.into()
}

fn parse_map<V: FromStr>(field: &str, s: &str) -> Result<BTreeMap<ArchId, V>> {
    let mut out = BTreeMap::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| cfg_err(field, format!("expected arch=value, got '{}'", item)))?;
        let arch: ArchId = k.trim().parse()?;
        let v = v.trim().parse().map_err(|_| cfg_err(field, format!("bad value in '{}'", item)))?;
        out.insert(arch, v);
    }
    Ok(out)
}

fn parse_archs(field: &str, s: &str) -> Result<Vec<ArchId>> {
    let v = gendistill::arch::parse_arch_list(s)?;
    if v.is_empty() {
        return Err(cfg_err(field, "at least one architecture is required"));
    }
    Ok(v)
}

impl Config {
    pub fn channels(&self) -> Result<usize> {
        Ok(DatasetName::from_str(&self.dataset)?.channels())
    }

    pub fn widths_map(&self) -> Result<BTreeMap<ArchId, usize>> {
        parse_map("widths", &self.widths)
    }

    pub fn taps_map(&self) -> Result<BTreeMap<ArchId, String>> {
        parse_map("taps", &self.taps)
    }

    pub fn gan_train(&self) -> Result<GanTrainConfig> {
        Ok(GanTrainConfig {
            epochs: self.gan_epochs,
            iters_per_epoch: self.gan_iters,
            batch_size: self.gan_batch,
            lr: self.gan_lr,
            seed: self.seed,
            loss: GanLoss::from_str(&self.gan_loss)?,
            ..Default::default()
        })
    }

    pub fn gan_arch(&self) -> Result<GanArch> {
        let mut a = GanArch::new(self.channels()?, gendistill::data::NUM_CLASSES);
        a.generator.noise_dim = self.noise_dim;
        a.generator.width = self.gen_width;
        a.discriminator.width = self.disc_width;
        Ok(a)
    }

    pub fn distill(&self) -> Result<DistillConfig> {
        Ok(DistillConfig {
            omega_g: self.omega_g,
            omega_l: self.omega_l,
            batch_per_class: self.batch_per_class,
            num_classes: gendistill::data::NUM_CLASSES,
            epochs: self.epochs,
            iters: self.iters,
            lr: self.lr,
            disc_lr: self.disc_lr,
            adv_batch: self.adv_batch,
            gan_loss: GanLoss::from_str(&self.gan_loss)?,
            seed: self.seed,
            ..Default::default()
        })
    }

    pub fn matcher_spec(&self, arch: ArchId) -> Result<MatcherSpec> {
        let mut spec = MatcherSpec::new(arch, gendistill::data::NUM_CLASSES, self.channels()?)
            .with_width(self.widths_map()?.get(&arch).copied());
        if let Some(tap) = self.taps_map()?.get(&arch) {
            spec = spec.with_tap(tap);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn model_pool(&self) -> Result<ModelPool> {
        let members = parse_archs("pool", &self.pool)?.into_iter().map(|a| self.matcher_spec(a)).collect::<Result<_>>()?;
        Ok(ModelPool::new(members, self.reinit_every)?)
    }

    pub fn eval(&self) -> Result<EvalRunConfig> {
        Ok(EvalRunConfig {
            arch: self.eval_arch.parse()?,
            widths: self.widths_map()?,
            epochs: self.eval_epochs,
            lr: self.eval_lr,
            batch_size: self.eval_batch,
            repeats: self.repeats,
            seed: self.seed,
            patience: self.patience,
            augment: self.augment,
            fixed_set: self.fixed_set,
        })
    }

    pub fn cross_archs(&self) -> Result<Vec<ArchId>> {
        parse_archs("archs", &self.archs)
    }

    pub fn omega_l_list(&self) -> Result<Vec<f64>> {
        let v: Vec<f64> = self
            .omega_l_values
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| cfg_err("omega_l_values", format!("'{}' is not a number", s))))
            .collect::<Result<_>>()?;
        if v.is_empty() {
            return Err(cfg_err("omega_l_values", "at least one value is required"));
        }
        if let Some(x) = v.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(cfg_err("omega_l_values", format!("values must be finite and >= 0, got {}", x)));
        }
        Ok(v)
    }

    /// Range checks for every field, reported with the field name.
    pub fn validate(&self) -> Result<()> {
        DatasetName::from_str(&self.dataset)?;
        if self.ipc == 0 {
            return Err(cfg_err("ipc", "must be at least 1"));
        }
        self.gan_train()?.validate()?;
        self.gan_arch()?.generator.validate()?;
        if self.disc_width == 0 {
            return Err(cfg_err("disc_width", "must be at least 1"));
        }
        self.distill()?.validate()?;
        self.model_pool()?;
        self.eval()?.validate()?;
        self.cross_archs()?;
        self.omega_l_list()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// The outcome of layering, with the warnings raised along the way.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: Config,
    pub budget: Option<Budget>,
    pub warnings: Vec<String>,
}

fn merge(base: &mut toml::Table, layer: &toml::Table) {
    for (k, v) in layer {
        base.insert(k.clone(), v.clone());
    }
}

pub fn read_config_file(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    text.parse::<toml::Table>().map_err(|e| cfg_err("config", format!("{}: {}", path.display(), e.message())))
}

/// Layers the sources and validates the result. `budget` comes from the
/// flag or, failing that, a `budget` key in the file.
pub fn resolve(budget_flag: Option<Budget>, file: Option<&toml::Table>, env_data_dir: Option<String>, flags: &toml::Table) -> Result<Resolved> {
    let mut file = file.cloned().unwrap_or_default();
    let file_budget = match file.remove("budget") {
        Some(toml::Value::String(s)) => {
            Some(<Budget as clap::ValueEnum>::from_str(&s, true).map_err(|_| cfg_err("budget", format!("unknown budget '{}'", s)))?)
        }
        Some(other) => return Err(cfg_err("budget", format!("expected a string, got {}", other))),
        None => None,
    };
    let budget = budget_flag.or(file_budget);
    let mut warnings = Vec::new();

    let mut table = toml::Table::try_from(Config::default()).expect("defaults serialize");
    if let Some(b) = budget {
        merge(&mut table, &b.overrides());
    }
    for k in file.keys() {
        if !table.contains_key(k) {
            return Err(cfg_err(k, "unknown configuration key"));
        }
    }
    merge(&mut table, &file);
    if let Some(dir) = env_data_dir.filter(|d| !d.is_empty()) {
        table.insert("data_dir".into(), toml::Value::String(dir));
    }
    for (k, v) in flags {
        if let Some(fv) = file.get(k) {
            if fv != v {
                warnings.push(format!("flag --{} = {} overrides config file value {}", k.replace('_', "-"), v, fv));
            }
        }
    }
    merge(&mut table, flags);
    let config: Config = table.try_into().map_err(|e: toml::de::Error| cfg_err("config", e.message().to_string()))?;
    config.validate()?;
    Ok(Resolved { config, budget, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(s: &str) -> toml::Table {
        s.parse().unwrap()
    }

    #[test]
    fn defaults_validate() {
        let r = resolve(None, None, None, &toml::Table::new()).unwrap();
        assert_eq!(r.config, Config::default());
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn every_budget_validates() {
        for b in [Budget::Smoke, Budget::Desk, Budget::Paper] {
            resolve(Some(b), None, None, &toml::Table::new()).unwrap();
        }
    }

    #[test]
    fn flag_beats_file_with_warning() {
        let file = flags("epochs = 5\nomega_g = 0.5");
        let r = resolve(None, Some(&file), None, &flags("epochs = 2")).unwrap();
        assert_eq!(r.config.epochs, 2);
        assert_eq!(r.config.omega_g, 0.5);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].contains("--epochs"));
    }

    #[test]
    fn file_beats_budget_and_env_sets_data_dir() {
        let file = flags("budget = \"smoke\"\ngan_epochs = 3");
        let r = resolve(None, Some(&file), Some("/tmp/x".into()), &toml::Table::new()).unwrap();
        assert_eq!(r.budget, Some(Budget::Smoke));
        assert_eq!(r.config.gan_epochs, 3);
        assert_eq!(r.config.gen_width, 4);
        assert_eq!(r.config.data_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn negative_omega_l_names_field() {
        let err = resolve(None, None, None, &flags("omega_l = -1.0")).unwrap_err();
        match err.downcast_ref::<Error>() {
            Some(Error::Config { field, .. }) => assert_eq!(field, "omega_l"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_file_key_is_rejected() {
        assert!(resolve(None, Some(&flags("omega = 1")), None, &toml::Table::new()).is_err());
    }

    #[test]
    fn maps_parse() {
        let c = Config { widths: "convnet3=32, resnet18=8".into(), taps: "resnet10=conv2".into(), ..Default::default() };
        assert_eq!(c.widths_map().unwrap()[&ArchId::ResNet18], 8);
        assert_eq!(c.matcher_spec(ArchId::ResNet10).unwrap().tap_id(), "conv2");
        let bad = Config { widths: "convnet3".into(), ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
