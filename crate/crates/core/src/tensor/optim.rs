use super::{ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    cfg: AdamWConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients and clears them.
    /// A non-finite gradient aborts the step before any parameter changes.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (name, t) in store.iter() {
            if let Some(g) = t.grad() {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {name}")));
                }
            }
        }
        if self.m.is_empty() {
            self.m = store.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c = &self.cfg;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::lit(c.lr);
        let decay = T::one() - T::lit(c.lr * c.weight_decay);
        let eps = T::lit(c.eps);
        for (k, t) in store.tensors_mut().iter_mut().enumerate() {
            let (data, grad) = t.data_and_grad_mut();
            let Some(grad) = grad else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] = data[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
            grad.fill(T::zero());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(values: &[f64], grads: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new(true);
        let id = s.add("w", Tensor::from_f64([values.len()], values).unwrap());
        s.get_mut(id).grad_mut().unwrap().copy_from_slice(grads);
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = store(&[1.0, -2.0], &[0.0, 0.0]);
        AdamW::new(AdamWConfig::default()).step(&mut s).unwrap();
        assert_eq!(s.get(s.id_of("w").unwrap()).data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut s = store(&[1.0, 1.0], &[0.3, -4.0]);
        AdamW::new(AdamWConfig::default()).step(&mut s).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
        let d = s.get(s.id_of("w").unwrap()).data();
        assert!((d[0] - (1.0 - 1e-3 * 0.3 / (0.3 + 1e-8))).abs() < 1e-15);
        assert!((d[1] - (1.0 + 1e-3 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut s = store(&[2.0], &[0.0]);
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        AdamW::new(cfg).step(&mut s).unwrap();
        assert!((s.get(s.id_of("w").unwrap()).data()[0] - (2.0 - 1e-3 * 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = store(&[2.0], &[f64::NAN]);
        let err = AdamW::new(AdamWConfig::default()).step(&mut s).unwrap_err();
        assert_eq!(err.kind(), "NonFiniteError");
        assert_eq!(s.get(s.id_of("w").unwrap()).data(), &[2.0]);
    }
}
