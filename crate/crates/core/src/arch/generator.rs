use gendistill_nn::{BatchNorm, ConvTranspose2d, Embedding, Graph, Init, Linear, Mode, ParamStore, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::seed;

const INIT: Init = Init::Normal(0.02);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub noise_dim: usize,
    pub num_classes: usize,
    /// Width of the learned label embedding concatenated to `z`.
    pub label_dim: usize,
    /// Image channels; outputs are `(channels, 32, 32)`.
    pub channels: usize,
    /// Channel count of the last hidden feature map; the first has twice as many.
    pub width: usize,
}

impl GeneratorSpec {
    pub fn new(channels: usize, num_classes: usize) -> Self {
        Self { noise_dim: 100, num_classes, label_dim: num_classes, channels, width: 64 }
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.channels, 32, 32]
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 {
            return config_err("noise_dim", "must be at least 1");
        }
        if self.num_classes == 0 || self.label_dim == 0 {
            return config_err("num_classes", "class count and label width must be positive");
        }
        if self.channels != 1 && self.channels != 3 {
            return config_err("channels", format!("output must have 1 or 3 channels, got {}", self.channels));
        }
        if self.width == 0 {
            return config_err("gen_width", "must be at least 1");
        }
        Ok(())
    }
}

/// `z ⊕ embed(y) -> linear -> BN -> ReLU -> (2w, 8, 8) -> convT -> BN -> ReLU
/// -> (w, 16, 16) -> convT -> tanh -> (C, 32, 32)`.
#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: GeneratorSpec,
    embed: Embedding,
    fc: Linear,
    bn0: BatchNorm,
    up1: ConvTranspose2d,
    bn1: BatchNorm,
    up2: ConvTranspose2d,
}

/// Builds a generator layout and its deterministically initialized parameters.
pub fn build_generator<T: Real>(spec: &GeneratorSpec, seed: u64) -> Result<(Generator, ParamStore<T>)> {
    spec.validate()?;
    let mut rng = seed::rng(seed);
    let mut store = ParamStore::new();
    let w = spec.width;
    let embed = Embedding::new(&mut store, "embed", spec.num_classes, spec.label_dim, &mut rng);
    let fc = Linear::new(&mut store, "fc", spec.noise_dim + spec.label_dim, 2 * w * 64, false, INIT, &mut rng);
    let bn0 = BatchNorm::new(&mut store, "bn0", 2 * w * 64);
    let up1 = ConvTranspose2d::new(&mut store, "up1", 2 * w, w, 4, 2, 1, false, INIT, &mut rng);
    let bn1 = BatchNorm::new(&mut store, "bn1", w);
    let up2 = ConvTranspose2d::new(&mut store, "up2", w, spec.channels, 4, 2, 1, true, INIT, &mut rng);
    let g = Generator { spec: spec.clone(), embed, fc, bn0, up1, bn1, up2 };
    Ok((g, store))
}

impl Generator {
    pub fn forward<'g, T: Real>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        z: Var<'g, T>,
        labels: &[usize],
        mode: Mode,
    ) -> Result<Var<'g, T>> {
        let zs = z.shape();
        let n = labels.len();
        if zs != [n, self.spec.noise_dim] || n == 0 {
            return Err(gendistill_nn::NnError::Shape {
                op: "generator",
                msg: format!("noise {:?} with {} labels, noise_dim {}", zs, n, self.spec.noise_dim),
            }
            .into());
        }
        let w = self.spec.width;
        let y = self.embed.forward(g, store, labels)?;
        let h = g.concat1(&[z, y])?;
        let h = self.bn0.forward(g, store, self.fc.forward(g, store, h)?, mode)?.relu();
        let h = h.reshape(&[n, 2 * w, 8, 8])?;
        let h = self.bn1.forward(g, store, self.up1.forward(g, store, h)?, mode)?.relu();
        Ok(self.up2.forward(g, store, h)?.tanh())
    }

    /// Detached forward pass returning images.
    pub fn generate<T: Real>(&self, store: &ParamStore<T>, z: &Tensor<T>, labels: &[usize], mode: Mode) -> Result<Tensor<T>> {
        let g = Graph::no_grad();
        Ok(self.forward(&g, store, g.constant(z.clone()), labels, mode)?.to_tensor())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> GeneratorSpec {
        GeneratorSpec { width: 8, ..GeneratorSpec::new(1, 10) }
    }

    #[test]
    fn output_shape_and_determinism() {
        let spec = small();
        let (gen, store) = build_generator::<f32>(&spec, 5).unwrap();
        let (_, again) = build_generator::<f32>(&spec, 5).unwrap();
        assert_eq!(store.fingerprint(), again.fingerprint());
        let labels: Vec<usize> = (0..16).map(|i| i % 10).collect();
        let z = Tensor::randn([16, 100], 1.0, &mut seed::rng(0));
        let x = gen.generate(&store, &z, &labels, Mode::Train).unwrap();
        assert_eq!(x.shape(), &[16, 1, 32, 32]);
    }

    #[test]
    fn zero_noise_dim_is_rejected() {
        let spec = GeneratorSpec { noise_dim: 0, ..small() };
        assert!(build_generator::<f32>(&spec, 0).is_err());
        let rgb = GeneratorSpec { channels: 2, ..small() };
        assert!(build_generator::<f32>(&rgb, 0).is_err());
    }

    #[test]
    fn labels_change_the_output() {
        let (gen, store) = build_generator::<f32>(&small(), 1).unwrap();
        let z = Tensor::randn([1, 100], 1.0, &mut seed::rng(2));
        let a = gen.generate(&store, &z, &[0], Mode::Eval).unwrap();
        let b = gen.generate(&store, &z, &[7], Mode::Eval).unwrap();
        assert!(a.zip_map(&b, |p, q| (p - q).abs()).unwrap().max_abs() > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn outputs_stay_in_range_for_large_noise(scale in 1.0f64..1e4, s in 0u64..100) {
            let (gen, store) = build_generator::<f32>(&small(), s).unwrap();
            let z = Tensor::randn([4, 100], scale, &mut seed::rng(s));
            for mode in [Mode::Train, Mode::Eval] {
                let x = gen.generate(&store, &z, &[0, 3, 6, 9], mode).unwrap();
                prop_assert!(x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
    }
}
