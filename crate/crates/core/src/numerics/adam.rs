//! Bias-corrected Adam with decoupled weight decay.

use super::tensor::Param;
use super::NumericsError;

/// Optimizer hyperparameters. Defaults follow the training recipe used
/// throughout this project.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 1e-3,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment buffers plus the step counter.
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &[Param]) -> Self {
        let m = params
            .iter()
            .map(|p| vec![0.0; p.tensor.borrow().len()])
            .collect();
        let v = params
            .iter()
            .map(|p| vec![0.0; p.tensor.borrow().len()])
            .collect();
        Self {
            cfg,
            step: 0,
            m,
            v,
        }
    }

    /// One update over `params`, which must be the slice the state was built
    /// for. Rejects parameters whose gradient buffer is absent.
    pub fn step(&mut self, params: &[Param]) -> Result<(), NumericsError> {
        assert_eq!(params.len(), self.m.len(), "parameter list changed size");
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, p) in params.iter().enumerate() {
            let mut tensor = p.tensor.borrow_mut();
            let n = tensor.len();
            let grad = match tensor.grad.take() {
                Some(g) => g,
                None => {
                    return Err(NumericsError::MissingGrad {
                        name: p.name.clone(),
                    })
                }
            };
            debug_assert_eq!(self.m[i].len(), n, "state misaligned for {}", p.name);
            let data = tensor.data_mut();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..n {
                let g = grad[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * data[j]);
            }
            tensor.grad = Some(grad);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Graph, Tensor};
    use std::rc::Rc;

    fn param(name: &str, data: Vec<f64>) -> Param {
        Param {
            name: name.into(),
            tensor: Tensor::new(vec![data.len()], data)
                .unwrap()
                .with_grad()
                .into_ref(),
        }
    }

    #[test]
    fn one_step_decreases_square() {
        let p = param("x", vec![1.0]);
        let params = vec![p.clone()];
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let mut g = Graph::new();
        let x = g.leaf(Rc::clone(&p.tensor));
        let y = g.mul(x, x).unwrap();
        let root = g.sum(y);
        g.backward(root).unwrap();
        adam.step(&params).unwrap();
        let xv = p.tensor.borrow().data()[0];
        assert!(xv < 1.0 && xv > 0.9, "x after one step: {xv}");
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let p = param("x", vec![0.7, -0.3]);
        let params = vec![p.clone()];
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, &params);
        p.tensor.borrow_mut().zero_grad();
        adam.step(&params).unwrap();
        assert_eq!(p.tensor.borrow().data(), &[0.7, -0.3]);
    }

    #[test]
    fn missing_grad_rejected() {
        let p = param("w", vec![1.0]);
        let params = vec![p.clone()];
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let err = adam.step(&params).unwrap_err();
        assert!(err.to_string().contains('w'));
    }

    #[test]
    fn quadratic_converges() {
        // 2000 steps on f(x) = 0.5 * |x|^2 from (0.3, -0.4)
        let p = param("x", vec![0.3, -0.4]);
        let params = vec![p.clone()];
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        for _ in 0..2000 {
            {
                let mut t = p.tensor.borrow_mut();
                t.zero_grad();
                let g: Vec<f64> = t.data().to_vec();
                t.accumulate_grad(&g);
            }
            adam.step(&params).unwrap();
        }
        let t = p.tensor.borrow();
        let norm = t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-2, "|x| after 2000 steps: {norm}");
    }
}
