use crate::graph::Gradients;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam with bias correction. State is keyed by [`ParamId`], so an
/// optimizer must only be used with one store layout.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every trainable parameter of `store` that has a gradient.
    /// Returns the number of parameters touched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> usize {
        let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
        let pairs: Vec<(ParamId, Tensor<T>)> = ids
            .into_iter()
            .filter_map(|id| grads.param(store, id).map(|g| (id, g.clone())))
            .collect();
        self.step_with(store, &pairs)
    }

    /// Same as [`step`](Self::step) with explicitly supplied gradients.
    pub fn step_with(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> usize {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let step_size = T::from_f64_lossy(c.lr / bc1);
        let inv_sqrt_bc2 = T::from_f64_lossy(1.0 / bc2.sqrt());
        let eps = T::from_f64_lossy(c.eps);
        let wd = T::from_f64_lossy(c.weight_decay);
        let n = store.len();
        if self.m.len() < n {
            self.m.resize(n, None);
            self.v.resize(n, None);
        }
        for (id, g) in grads {
            let i = id.index();
            let p = store.get_mut(*id);
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            for (((w, &gr), mm), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gr = gr + wd * *w;
                *mm = b1 * *mm + one_b1 * gr;
                *vv = b2 * *vv + one_b2 * gr * gr;
                *w -= step_size * *mm / ((*vv).sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        grads.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::params::ParamKind;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap(), ParamKind::Trainable);
        let buf = store.add("b", Tensor::zeros([1]), ParamKind::Buffer);
        let g = Graph::new();
        let w = g.param(&store, id);
        let loss = w.mul(w).unwrap().sum_all();
        let grads = g.backward(loss).unwrap();
        drop(g);
        let mut opt = Adam::new(AdamConfig::new(0.1, 0.9, 0.999));
        assert_eq!(opt.step(&mut store, &grads), 1);
        let got = store.get(id).data().to_vec();
        for (a, b) in got.iter().zip([0.9, -1.9, 0.4]) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert_eq!(store.get(buf).data(), &[0.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::new([2], vec![3.0, -4.0]).unwrap(), ParamKind::Trainable);
        let target = Tensor::new([2], vec![1.0, 2.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::new(0.05, 0.9, 0.999));
        for _ in 0..2000 {
            let g = Graph::new();
            let loss = g.param(&store, id).sum_sq_diff(g.constant(target.clone())).unwrap();
            let grads = g.backward(loss).unwrap();
            drop(g);
            opt.step(&mut store, &grads);
        }
        for (a, b) in store.get(id).data().iter().zip(target.data()) {
            assert!((a - b).abs() < 1e-3);
        }
    }
}
