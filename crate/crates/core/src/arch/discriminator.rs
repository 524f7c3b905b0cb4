use gendistill_nn::{Conv2d, Graph, Init, Linear, ParamStore, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::Critic;
use crate::error::{config_err, Result};
use crate::seed;

const INIT: Init = Init::Normal(0.02);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub num_classes: usize,
    pub channels: usize,
    pub width: usize,
}

impl DiscriminatorSpec {
    pub fn new(channels: usize, num_classes: usize) -> Self {
        Self { num_classes, channels, width: 64 }
    }
}

/// Image concatenated with one constant plane per class (one-hot), then
/// three stride-2 4×4 convs with LeakyReLU(0.2) and a linear logit.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    convs: [Conv2d; 3],
    head: Linear,
}

pub fn build_discriminator<T: Real>(spec: &DiscriminatorSpec, seed: u64) -> Result<(Discriminator, ParamStore<T>)> {
    if spec.num_classes == 0 || spec.channels == 0 || spec.width == 0 {
        return config_err("disc_width", format!("{:?} has a zero dimension", spec));
    }
    let mut rng = seed::rng(seed);
    let mut store = ParamStore::new();
    let w = spec.width;
    let cin = spec.channels + spec.num_classes;
    let convs = [
        Conv2d::new(&mut store, "conv1", cin, w, 4, 2, 1, true, INIT, &mut rng),
        Conv2d::new(&mut store, "conv2", w, 2 * w, 4, 2, 1, true, INIT, &mut rng),
        Conv2d::new(&mut store, "conv3", 2 * w, 4 * w, 4, 2, 1, true, INIT, &mut rng),
    ];
    let head = Linear::new(&mut store, "head", 4 * w * 16, 1, true, INIT, &mut rng);
    Ok((Discriminator { spec: spec.clone(), convs, head }, store))
}

impl Discriminator {
    /// Probabilities `D(x | y)` in `(0, 1)`.
    pub fn scores<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>, labels: &[usize]) -> Result<Vec<T>> {
        let g = Graph::no_grad();
        let l = self.logits(&g, store, g.constant(x.clone()), labels)?;
        Ok(l.sigmoid().value().data().to_vec())
    }
}

impl<T: Real> Critic<T> for Discriminator {
    fn logits<'g>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>, labels: &[usize]) -> Result<Var<'g, T>> {
        let s = x.shape();
        let k = self.spec.num_classes;
        if s.len() != 4 || s[0] != labels.len() || s[0] == 0 || s[1] != self.spec.channels || s[2] != 32 || s[3] != 32 {
            return Err(gendistill_nn::NnError::Shape {
                op: "discriminator",
                msg: format!("input {:?} with {} labels, expected {} channels at 32x32", s, labels.len(), self.spec.channels),
            }
            .into());
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(crate::error::Error::Usage(format!("label {} with {} classes", bad, k)));
        }
        let plane = 32 * 32;
        let mut onehot = Tensor::zeros([s[0], k, 32, 32]);
        for (i, &y) in labels.iter().enumerate() {
            let start = (i * k + y) * plane;
            onehot.data_mut()[start..start + plane].fill(T::one());
        }
        let mut h = g.concat1(&[x, g.constant(onehot)])?;
        for conv in &self.convs {
            h = conv.forward(g, store, h)?.leaky_relu(0.2);
        }
        let out = self.head.forward(g, store, h.flatten()?)?;
        Ok(out.reshape(&[s[0]])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_are_probabilities_and_deterministic() {
        let spec = DiscriminatorSpec { width: 8, ..DiscriminatorSpec::new(1, 10) };
        let (d, store) = build_discriminator::<f32>(&spec, 0).unwrap();
        let x = Tensor::randn([5, 1, 32, 32], 1.0, &mut seed::rng(1));
        let labels = [0, 1, 2, 3, 9];
        let s = d.scores(&store, &x, &labels).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(s, d.scores(&store, &x, &labels).unwrap());
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let spec = DiscriminatorSpec { width: 8, ..DiscriminatorSpec::new(1, 10) };
        let (d, store) = build_discriminator::<f32>(&spec, 0).unwrap();
        let x = Tensor::zeros([2, 3, 32, 32]);
        let err = d.scores(&store, &x, &[0, 1]).unwrap_err();
        assert!(err.to_string().contains("shape"), "{err}");
    }
}
