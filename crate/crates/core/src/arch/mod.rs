//! Architecture registry: the conditional generator and discriminator, and
//! the matcher/evaluation classifiers with designated feature taps.

mod discriminator;
mod generator;
mod matchers;

use std::fmt;
use std::str::FromStr;

use gendistill_nn::{Graph, Mode, ParamStore, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use discriminator::{build_discriminator, Discriminator, DiscriminatorSpec};
pub use generator::{build_generator, Generator, GeneratorSpec};

/// Logits and tap features produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutputs<'g, T: Real> {
    pub logits: Var<'g, T>,
    pub features: Var<'g, T>,
}

/// A classifier that also exposes an intermediate activation.
pub trait FeatureNet<T: Real>: Send + Sync {
    fn forward_with_features<'g>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        mode: Mode,
    ) -> Result<ForwardOutputs<'g, T>>;
}

/// A conditional critic producing one real/fake logit per image.
pub trait Critic<T: Real> {
    fn logits<'g>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>, labels: &[usize]) -> Result<Var<'g, T>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchId {
    ConvNet3,
    ResNet10,
    ResNet18,
    AlexNet,
    Vgg11,
}

impl ArchId {
    pub const ALL: [ArchId; 5] = [ArchId::ConvNet3, ArchId::ResNet10, ArchId::ResNet18, ArchId::AlexNet, ArchId::Vgg11];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::ConvNet3 => "convnet3",
            ArchId::ResNet10 => "resnet10",
            ArchId::ResNet18 => "resnet18",
            ArchId::AlexNet => "alexnet",
            ArchId::Vgg11 => "vgg11",
        }
    }

    pub fn default_width(self) -> usize {
        match self {
            ArchId::ConvNet3 => 128,
            _ => 64,
        }
    }

    pub fn default_tap(self) -> &'static str {
        match self {
            ArchId::ConvNet3 => "block2",
            ArchId::ResNet10 | ArchId::ResNet18 => "layer2",
            ArchId::AlexNet | ArchId::Vgg11 => "stage2",
        }
    }

    /// Every tap the architecture can expose, in forward order.
    pub fn taps(self) -> &'static [&'static str] {
        match self {
            ArchId::ConvNet3 => &["block1", "block2", "block3"],
            ArchId::ResNet10 | ArchId::ResNet18 => &["stem", "conv2", "layer1", "layer2", "layer3", "layer4"],
            ArchId::AlexNet => &["stage1", "stage2", "stage3"],
            ArchId::Vgg11 => &["stage1", "stage2", "stage3", "stage4", "stage5"],
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchId::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::UnsupportedArch(s.to_string()))
    }
}

/// Parses a comma-separated architecture list.
pub fn parse_arch_list(s: &str) -> Result<Vec<ArchId>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatcherSpec {
    pub arch: ArchId,
    pub num_classes: usize,
    pub channels: usize,
    /// Base width; `None` uses the architecture default.
    pub width: Option<usize>,
    /// Feature tap; `None` uses the architecture default.
    pub tap: Option<String>,
}

impl MatcherSpec {
    pub fn new(arch: ArchId, num_classes: usize, channels: usize) -> Self {
        Self { arch, num_classes, channels, width: None, tap: None }
    }

    pub fn with_width(mut self, width: Option<usize>) -> Self {
        self.width = width;
        self
    }

    pub fn with_tap(mut self, tap: &str) -> Self {
        self.tap = Some(tap.to_string());
        self
    }

    pub fn width(&self) -> usize {
        self.width.unwrap_or_else(|| self.arch.default_width())
    }

    pub fn tap_id(&self) -> &str {
        self.tap.as_deref().unwrap_or_else(|| self.arch.default_tap())
    }

    pub fn validate(&self) -> Result<usize> {
        if self.num_classes == 0 || self.channels == 0 || self.width() == 0 {
            return Err(Error::Config {
                field: "matcher".into(),
                msg: format!("{:?} has a zero dimension", self),
            });
        }
        self.arch
            .taps()
            .iter()
            .position(|&t| t == self.tap_id())
            .ok_or_else(|| Error::Config {
                field: "tap".into(),
                msg: format!("{} has no tap '{}' (available: {})", self.arch, self.tap_id(), self.arch.taps().join(", ")),
            })
    }
}

/// A freshly initialized classifier with its parameters.
pub struct Matcher<T: Real> {
    pub spec: MatcherSpec,
    pub store: ParamStore<T>,
    net: Box<dyn FeatureNet<T>>,
}

impl<T: Real> fmt::Debug for Matcher<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Matcher").field("spec", &self.spec).field("store", &self.store).finish()
    }
}

impl<T: Real> Matcher<T> {
    /// Wraps an arbitrary network, e.g. a small fixture model.
    pub fn from_parts(spec: MatcherSpec, net: Box<dyn FeatureNet<T>>, store: ParamStore<T>) -> Self {
        Self { spec, store, net }
    }

    pub fn net(&self) -> &dyn FeatureNet<T> {
        self.net.as_ref()
    }

    /// Forward pass with the matcher's own parameters.
    pub fn forward_with_features<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>, mode: Mode) -> Result<ForwardOutputs<'g, T>> {
        let s = x.shape();
        if s.len() != 4 || s[0] == 0 || s[1] != self.spec.channels {
            return Err(gendistill_nn::NnError::Shape {
                op: "matcher",
                msg: format!("input {:?} for {} with {} channels", s, self.spec.arch, self.spec.channels),
            }
            .into());
        }
        self.net.forward_with_features(g, &self.store, x, mode)
    }

    /// Inference-mode class predictions for a batch.
    pub fn predict(&self, pixels: &Tensor<T>) -> Result<Vec<usize>> {
        let g = Graph::no_grad();
        let out = self.forward_with_features(&g, g.constant(pixels.clone()), Mode::Eval)?;
        Ok(out.logits.value().argmax_rows()?)
    }
}

/// Builds a freshly initialized matcher; parameters depend only on `seed`.
pub fn build_matcher<T: Real>(spec: &MatcherSpec, seed: u64) -> Result<Matcher<T>> {
    let tap = spec.validate()?;
    let mut rng = seed::rng(seed);
    let mut store = ParamStore::new();
    let (w, k, c) = (spec.width(), spec.num_classes, spec.channels);
    let net: Box<dyn FeatureNet<T>> = match spec.arch {
        ArchId::ConvNet3 => Box::new(matchers::ConvNet3::new(&mut store, c, w, k, tap, &mut rng)),
        ArchId::ResNet10 => Box::new(matchers::ResNet::new(&mut store, c, w, k, [1, 1, 1, 1], tap, &mut rng)),
        ArchId::ResNet18 => Box::new(matchers::ResNet::new(&mut store, c, w, k, [2, 2, 2, 2], tap, &mut rng)),
        ArchId::AlexNet => Box::new(matchers::AlexNet::new(&mut store, c, w, k, tap, &mut rng)),
        ArchId::Vgg11 => Box::new(matchers::Vgg11::new(&mut store, c, w, k, tap, &mut rng)),
    };
    Ok(Matcher { spec: spec.clone(), store, net })
}

/// Per-example shape of the tap output for 32×32 inputs.
pub fn tap_shape(spec: &MatcherSpec) -> Result<Vec<usize>> {
    let m = build_matcher::<f32>(spec, 0)?;
    let g = Graph::no_grad();
    let x = g.constant(Tensor::zeros([1, spec.channels, 32, 32]));
    let out = m.forward_with_features(&g, x, Mode::Eval)?;
    Ok(out.features.shape()[1..].to_vec())
}
