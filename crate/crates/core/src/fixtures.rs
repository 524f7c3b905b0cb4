//! Tiny networks for gradient checks and fast tests. They accept any square
//! image side, unlike the benchmark architectures.

use gendistill_nn::{Conv2d, Graph, Init, Linear, Mode, ParamStore, Real, Tensor, Var};

use crate::arch::{ArchId, Critic, FeatureNet, ForwardOutputs, Matcher, MatcherSpec};
use crate::error::Result;
use crate::seed;

/// `conv3x3 -> tanh` (the tap) then `linear -> logits`.
#[derive(Debug, Clone)]
pub struct TinyMatcher {
    conv: Conv2d,
    head: Linear,
}

impl<T: Real> FeatureNet<T> for TinyMatcher {
    fn forward_with_features<'g>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>, _mode: Mode) -> Result<ForwardOutputs<'g, T>> {
        let features = self.conv.forward(g, store, x)?.tanh();
        let logits = self.head.forward(g, store, features.flatten()?)?;
        Ok(ForwardOutputs { logits, features })
    }
}

/// A two-layer matcher for `side × side` inputs. Its `MatcherSpec` is only a label:
/// it reports `convnet3` so it can sit in a pool.
pub fn tiny_matcher<T: Real>(channels: usize, side: usize, hidden: usize, num_classes: usize, seed: u64) -> Matcher<T> {
    let mut rng = seed::rng(seed);
    let mut store = ParamStore::new();
    let conv = Conv2d::new(&mut store, "conv", channels, hidden, 3, 1, 1, true, Init::FanInUniform, &mut rng);
    let head = Linear::new(&mut store, "head", hidden * side * side, num_classes, true, Init::FanInUniform, &mut rng);
    let spec = MatcherSpec::new(ArchId::ConvNet3, num_classes, channels).with_width(Some(hidden));
    Matcher::from_parts(spec, Box::new(TinyMatcher { conv, head }), store)
}

/// Linear critic on the image concatenated with one-hot label planes.
#[derive(Debug, Clone)]
pub struct TinyCritic {
    pub num_classes: usize,
    head: Linear,
}

impl TinyCritic {
    pub fn new<T: Real>(channels: usize, side: usize, num_classes: usize, seed: u64) -> (Self, ParamStore<T>) {
        let mut store = ParamStore::new();
        let head = Linear::new(&mut store, "head", (channels + num_classes) * side * side, 1, true, Init::Normal(0.1), &mut seed::rng(seed));
        (Self { num_classes, head }, store)
    }
}

impl<T: Real> Critic<T> for TinyCritic {
    fn logits<'g>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>, labels: &[usize]) -> Result<Var<'g, T>> {
        let s = x.shape();
        let plane = s[2] * s[3];
        let mut onehot = Tensor::zeros([s[0], self.num_classes, s[2], s[3]]);
        for (i, &y) in labels.iter().enumerate() {
            let start = (i * self.num_classes + y) * plane;
            onehot.data_mut()[start..start + plane].fill(T::one());
        }
        let h = g.concat1(&[x, g.constant(onehot)])?;
        Ok(self.head.forward(g, store, h.flatten()?)?.reshape(&[s[0]])?)
    }
}
