use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub params: AdamParams,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, params: AdamParams) -> Self {
        let zeros: Vec<Tensor> = store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            params,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Applies one update from the gradients accumulated in `store`.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<(), TrainError> {
        if let Some(id) = store.ids().find(|id| !store.grad(*id).is_finite()) {
            return Err(TrainError::NonFiniteGradient(store.name(id).to_string()));
        }
        self.step += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = store.grad(id).data().to_vec();
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let w = store.value_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_vec(vec![w]));
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = scalar_store(1.5);
        let mut a = Adam::new(&s, AdamParams::default());
        a.step(&mut s, 0.1).unwrap();
        assert_eq!(s.values()[0].data(), &[1.5]);
        assert_eq!(a.moments().0[0].data(), &[0.0]);
        assert_eq!(a.moments().1[0].data(), &[0.0]);
        assert_eq!(a.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-3, -0.5, 7.0, 1e4] {
            let mut s = scalar_store(0.0);
            let id = s.ids().next().unwrap();
            s.grad_mut(id).data_mut()[0] = g;
            let mut a = Adam::new(&s, AdamParams::default());
            let lr = 0.01;
            a.step(&mut s, lr).unwrap();
            let delta = s.value(id).data()[0];
            assert_eq!(delta.signum(), -g.signum());
            assert!(delta.abs() >= 0.999 * lr && delta.abs() <= lr, "{g}: {delta}");
        }
    }

    #[test]
    fn quadratic_converges() {
        let mut s = scalar_store(0.0);
        let id = s.ids().next().unwrap();
        let mut a = Adam::new(&s, AdamParams::default());
        for _ in 0..500 {
            let w = s.value(id).data()[0];
            s.grad_mut(id).data_mut()[0] = 2.0 * (w - 3.0);
            a.step(&mut s, 0.05).unwrap();
        }
        assert!((s.value(id).data()[0] - 3.0).abs() < 0.05);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar_store(0.0);
        s.add("bad", Tensor::from_vec(vec![1.0, 2.0]));
        let bad = s.id_of("bad").unwrap();
        s.grad_mut(bad).data_mut()[1] = f64::NAN;
        let mut a = Adam::new(&s, AdamParams::default());
        let before = s.clone();
        assert_eq!(a.step(&mut s, 0.1), Err(TrainError::NonFiniteGradient("bad".into())));
        assert_eq!(s.values(), before.values());
        assert_eq!(a.step, 0);
    }
}
