use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so their L2 norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam moments for one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One descent step on `params` along `grads`. Gradients are clipped to
    /// `max_norm` first when given. A non-finite gradient or result leaves
    /// `params` and the moments untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &mut [f64], max_norm: Option<f64>) -> Result<f64> {
        ensure_len("optimizer parameters", self.m.len(), params.len())?;
        ensure_len("optimizer gradients", self.m.len(), grads.len())?;
        let norm = match max_norm {
            Some(c) => clip_grad_norm(grads, c),
            None => global_norm(grads),
        };
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm {norm}")));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = (self.step + 1) as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut next = Vec::with_capacity(params.len());
        let mut m = self.m.clone();
        let mut v = self.v.clone();
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let p = params[i] - lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("parameter {i} after update")));
            }
            next.push(p);
        }
        params.copy_from_slice(&next);
        self.m = m;
        self.v = v;
        self.step += 1;
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = vec![3.0, 4.0];
        let n = clip_grad_norm(&mut g, 0.5);
        assert_eq!(n, 5.0);
        assert!((global_norm(&g) - 0.5).abs() < 1e-15);
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);

        let mut small = vec![0.1, 0.2];
        clip_grad_norm(&mut small, 0.5);
        assert_eq!(small, vec![0.1, 0.2]);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // f(w) = (w - 3)^2
        let mut w = vec![0.0];
        let mut opt = Adam::new(1, AdamConfig::with_lr(1e-2));
        for _ in 0..10_000 {
            let mut g = vec![2.0 * (w[0] - 3.0)];
            opt.step(&mut w, &mut g, None).unwrap();
        }
        assert!((w[0] - 3.0).abs() < 1e-3, "{}", w[0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = vec![1.0, -1.0];
        let mut opt = Adam::new(2, AdamConfig::with_lr(0.1));
        opt.step(&mut w, &mut [5.0, -0.01], None).unwrap();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-5);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut w = vec![1.0, 2.0];
        let mut opt = Adam::new(2, AdamConfig::default());
        let err = opt.step(&mut w, &mut [f64::NAN, 0.0], Some(0.5));
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(w, vec![1.0, 2.0]);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn length_mismatch() {
        let mut opt = Adam::new(2, AdamConfig::default());
        assert!(opt.step(&mut [0.0; 3], &mut [0.0; 3], None).is_err());
    }
}
