//! Parameterized building blocks. Layers hold only [`ParamId`]s; values live
//! in a [`ParamStore`] so the same layout can be re-bound to a loaded store.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalization uses batch statistics and records running-stat updates.
    Train,
    /// Normalization uses stored running statistics.
    Eval,
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and bias.
    FanInUniform,
    /// `N(0, std)` weights, zero bias.
    Normal(f64),
}

impl Init {
    fn weight<T: Real, R: Rng + ?Sized>(self, shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<T> {
        match self {
            Init::FanInUniform => Tensor::uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt(), rng),
            Init::Normal(std) => Tensor::randn(shape, std, rng),
        }
    }

    fn bias<T: Real, R: Rng + ?Sized>(self, n: usize, fan_in: usize, rng: &mut R) -> Tensor<T> {
        match self {
            Init::FanInUniform => Tensor::uniform([n], 1.0 / (fan_in.max(1) as f64).sqrt(), rng),
            Init::Normal(_) => Tensor::zeros([n]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let w = init.weight(vec![out_c, in_c, kernel, kernel], fan_in, rng);
        let weight = store.add(format!("{name}.weight"), w, ParamKind::Trainable);
        let bias = bias.then(|| store.add(format!("{name}.bias"), init.bias(out_c, fan_in, rng), ParamKind::Trainable));
        Self { weight, bias, stride, pad }
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let y = x.conv2d(g.param(store, self.weight), self.stride, self.pad)?;
        match self.bias {
            Some(b) => y.bias_add(g.param(store, b)),
            None => Ok(y),
        }
    }
}

/// Transposed convolution with a `(in, out, k, k)` kernel.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let fan_in = out_c * kernel * kernel;
        let w = init.weight(vec![in_c, out_c, kernel, kernel], fan_in, rng);
        let weight = store.add(format!("{name}.weight"), w, ParamKind::Trainable);
        let bias = bias.then(|| store.add(format!("{name}.bias"), init.bias(out_c, fan_in, rng), ParamKind::Trainable));
        Self { weight, bias, stride, pad }
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let y = x.conv_transpose2d(g.param(store, self.weight), self.stride, self.pad)?;
        match self.bias {
            Some(b) => y.bias_add(g.param(store, b)),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = init.weight(vec![fan_out, fan_in], fan_in, rng);
        let weight = store.add(format!("{name}.weight"), w, ParamKind::Trainable);
        let bias = bias.then(|| store.add(format!("{name}.bias"), init.bias(fan_out, fan_in, rng), ParamKind::Trainable));
        Self { weight, bias }
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let y = x.linear(g.param(store, self.weight))?;
        match self.bias {
            Some(b) => y.bias_add(g.param(store, b)),
            None => Ok(y),
        }
    }
}

/// Batch normalization over dimension 1 of rank-2 or rank-4 inputs.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones([channels]), ParamKind::Trainable),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([channels]), ParamKind::Trainable),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros([channels]), ParamKind::Buffer),
            running_var: store.add(format!("{name}.running_var"), Tensor::ones([channels]), ParamKind::Buffer),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward<'g, T: Real>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        mode: Mode,
    ) -> Result<Var<'g, T>> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match mode {
            Mode::Eval => {
                let (y, _, _) = x.batch_norm(gamma, beta, Some((store.get(self.running_mean), store.get(self.running_var))), self.eps)?;
                Ok(y)
            }
            Mode::Train => {
                let shape = x.shape();
                let count = shape[0] * shape[2..].iter().product::<usize>();
                let (y, mean, var) = x.batch_norm(gamma, beta, None, self.eps)?;
                let m = T::from_f64_lossy(self.momentum);
                let keep = T::one() - m;
                let unbias = if count > 1 {
                    T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap()
                } else {
                    T::one()
                };
                let rm = store.get(self.running_mean);
                let rv = store.get(self.running_var);
                let new_rm = Tensor::new(
                    rm.shape().to_vec(),
                    rm.data().iter().zip(&mean).map(|(&r, &b)| keep * r + m * b).collect(),
                )?;
                let new_rv = Tensor::new(
                    rv.shape().to_vec(),
                    rv.data().iter().zip(&var).map(|(&r, &b)| keep * r + m * b * unbias).collect(),
                )?;
                g.record_buffer_update(store, self.running_mean, new_rm);
                g.record_buffer_update(store, self.running_var, new_rv);
                Ok(y)
            }
        }
    }
}

/// Learned lookup table `(num_embeddings, dim)`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        num: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self { table: store.add(format!("{name}.table"), Tensor::randn([num, dim], 1.0, rng), ParamKind::Trainable) }
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, store: &ParamStore<T>, ids: &[usize]) -> Result<Var<'g, T>> {
        g.param(store, self.table).gather_rows(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batch_norm_train_normalizes_and_records_running_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let g = Graph::new();
        let x = g.constant(Tensor::from_fn([4, 2, 3, 3], |i| (i as f64 * 0.7).sin() * 3.0 + 1.0));
        let y = bn.forward(&g, &store, x, Mode::Train).unwrap().to_tensor();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| y.data()[(b * 2 + ch) * 9..(b * 2 + ch + 1) * 9].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        let before = store.fingerprint();
        store.apply_buffer_updates(g.take_buffer_updates()).unwrap();
        assert_ne!(before, store.fingerprint());
        assert_ne!(store.get(bn.running_mean).data()[0], 0.0);
    }

    #[test]
    fn layers_produce_expected_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let conv = Conv2d::new(&mut store, "c", 3, 8, 3, 2, 1, true, Init::FanInUniform, &mut rng);
        let up = ConvTranspose2d::new(&mut store, "t", 8, 4, 4, 2, 1, false, Init::Normal(0.02), &mut rng);
        let lin = Linear::new(&mut store, "l", 4 * 16 * 16, 5, true, Init::FanInUniform, &mut rng);
        let emb = Embedding::new(&mut store, "e", 10, 6, &mut rng);
        let g = Graph::new();
        let x = g.constant(Tensor::zeros([2, 3, 16, 16]));
        let h = conv.forward(&g, &store, x).unwrap();
        assert_eq!(h.shape(), vec![2, 8, 8, 8]);
        let u = up.forward(&g, &store, h).unwrap();
        assert_eq!(u.shape(), vec![2, 4, 16, 16]);
        let o = lin.forward(&g, &store, u.flatten().unwrap()).unwrap();
        assert_eq!(o.shape(), vec![2, 5]);
        assert_eq!(emb.forward(&g, &store, &[3, 9, 0]).unwrap().shape(), vec![3, 6]);
        assert!(emb.forward(&g, &store, &[10]).is_err());
    }
}
