use crate::autodiff::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moment estimates with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = |n: usize| vec![T::zero(); n];
        Self {
            config,
            step: 0,
            m: params.iter().map(|(_, p)| zeros(p.tensor.len())).collect(),
            v: params.iter().map(|(_, p)| zeros(p.tensor.len())).collect(),
        }
    }

    /// Rebuilds a state from persisted moments.
    pub fn from_parts(config: AdamConfig, step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Self {
        Self { config, step, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// Applies one update to every parameter and clears the gradients.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters but the store holds {}",
                self.m.len(),
                params.len()
            )));
        }
        for (id, p) in params.iter() {
            let Some(g) = p.tensor.grad() else {
                return Err(Error::Contract(format!("parameter `{}` has no gradient", p.name)));
            };
            if g.len() != self.m[id.index()].len() {
                return Err(Error::Contract(format!("moment shape mismatch for `{}`", p.name)));
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let step_size = T::from_f64_lossy(c.lr / bc1);
        let bc2_sqrt = T::from_f64_lossy(bc2.sqrt());
        let eps = T::from_f64_lossy(c.eps);

        for (id, p) in params.iter_mut() {
            let grad = p.tensor.take_grad().expect("checked above");
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (((w, &g), mi), vi) in p.tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * g;
                *vi = b2 * *vi + one_b2 * g * g;
                *w -= step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::ParamGroup;
    use crate::tensor::Tensor;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", ParamGroup::Head, Tensor::from_f64([values.len()], values).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(&[1.0, -2.0]);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        s.get_mut(s.id("w").unwrap()).tensor.set_grad(vec![0.0, 0.0]).unwrap();
        adam.step(&mut s).unwrap();
        assert_eq!(s.tensor(s.id("w").unwrap()).data(), &[1.0, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let lr = 1e-3;
        let mut s = store(&[0.5, 0.5, 0.5]);
        let mut adam = AdamState::new(&s, AdamConfig::with_lr(lr));
        let id = s.id("w").unwrap();
        s.get_mut(id).tensor.set_grad(vec![3.0, -0.01, 1e-3]).unwrap();
        adam.step(&mut s).unwrap();
        let w = s.tensor(id).data();
        for (&wi, sign) in w.iter().zip([1.0, -1.0, 1.0]) {
            let delta = 0.5 - wi;
            assert!(delta * sign > 0.0);
            assert!(delta.abs() <= lr && delta.abs() >= 0.99 * lr, "{delta}");
        }
        assert!(s.tensor(id).grad().is_none(), "grads cleared after the update");
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut s = store(&[1.0]);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        assert!(matches!(adam.step(&mut s), Err(Error::Contract(_))));
        assert_eq!(adam.step_count(), 0);
    }
}
