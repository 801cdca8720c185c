use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, ParamSet};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Matrix> = params
            .tensors()
            .iter()
            .map(|t| Matrix::zeros(t.rows, t.cols))
            .collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &mut Gradients) {
        if let Some(max) = self.config.clip_norm {
            grads.clip_norm(max);
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimises_quadratic() {
        let mut params = ParamSet::new();
        params.add("x", Matrix::from_vec(1, 2, vec![3.0, -2.0]));
        let mut opt = Adam::new(
            &params,
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
        );
        for _ in 0..500 {
            let x = params.tensors()[0].clone();
            let mut g = Gradients {
                tensors: vec![x.map(|v| 2.0 * v)],
            };
            opt.step(&mut params, &mut g);
        }
        assert!(params.tensors()[0].data.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = ParamSet::new();
        params.add("x", Matrix::from_vec(1, 1, vec![1.0]));
        let mut opt = Adam::new(&params, AdamConfig::default());
        let mut g = Gradients {
            tensors: vec![Matrix::from_vec(1, 1, vec![0.5])],
        };
        opt.step(&mut params, &mut g);
        assert!((params.tensors()[0].data[0] - (1.0 - 1e-3)).abs() < 1e-9);
    }
}
