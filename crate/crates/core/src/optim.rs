//! First-order optimisation: AdamW with a cosine-annealed step size.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numkernel::DiffTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Floor of the cosine schedule.
    pub min_lr: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            min_lr: 0.0,
        }
    }
}

/// `min + (base - min) · (1 + cos(π · epoch / total)) / 2`.
pub fn cosine_lr(base: f64, min_lr: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = epoch.min(total) as f64 / total as f64;
    min_lr + (base - min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Adam with decoupled weight decay. Moment buffers follow the parameter
/// order handed to [`AdamW::step`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update at learning rate `lr` using each tensor's stored
    /// gradient. Tensors without a gradient are left alone.
    pub fn step(&mut self, params: &mut [&mut DiffTensor], lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(shape_err!("optimizer state does not match the parameter list"));
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let Some(g) = p.grad().map(|g| g.to_vec()) else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, x) in p.values_mut().iter_mut().enumerate() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *x *= 1.0 - lr * c.weight_decay;
                *x -= lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1.0, 0.0, 0, 10), 1.0);
        assert!(cosine_lr(1.0, 0.0, 10, 10).abs() < 1e-15);
        assert!((cosine_lr(1.0, 0.0, 5, 10) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // the bias-corrected first Adam step has magnitude lr in every coordinate
        let mut p = DiffTensor::param(vec![2], vec![1.0, -1.0]).unwrap();
        p.set_grad(vec![0.5, -2.0]).unwrap();
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        });
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.values()[0] - 0.9).abs() < 1e-6);
        assert!((p.values()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn decay_without_gradient_signal() {
        let mut p = DiffTensor::param(vec![1], vec![2.0]).unwrap();
        p.set_grad(vec![0.0]).unwrap();
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.5,
            ..AdamWConfig::default()
        });
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.values()[0] - 2.0 * 0.95).abs() < 1e-12);
    }
}
