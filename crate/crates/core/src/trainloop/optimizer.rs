use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Decay the learning rate linearly to zero over the run.
    pub linear_decay: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 3e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
            linear_decay: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(format!("eps must be positive, got {}", self.eps));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(format!("clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    /// Learning rate for update number `step` (0-based) of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if self.linear_decay && total > 0 {
            self.learning_rate * (1.0 - step as f64 / total as f64)
        } else {
            self.learning_rate
        }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step_count: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, n_params: usize) -> Self {
        OptimizerState {
            config,
            step_count: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// Scale `grads` in place so their global norm is at most the
    /// configured ceiling. Returns the norm before clipping.
    pub fn clip(&self, grads: &mut [f64]) -> f64 {
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if let Some(c) = self.config.clip_norm {
            if norm > c {
                let s = c / norm;
                grads.iter_mut().for_each(|g| *g *= s);
            }
        }
        norm
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step_count += 1;
        let c = &self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = 1.0 - lr * c.weight_decay;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] = params[i] * decay - lr * mhat / (vhat.sqrt() + c.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar AdamW written out longhand.
    fn reference(theta0: f64, grads: &[f64], lr: f64, wd: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut theta) = (0.0, 0.0, theta0);
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            theta -= lr * wd * theta;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        theta
    }

    #[test]
    fn matches_scalar_reference() {
        let grads = [0.5, -1.25, 2.0, 0.0, 3.5, -0.1];
        for &(theta0, lr, wd) in &[(1.0, 0.1, 0.0), (-2.0, 0.01, 0.1), (0.3, 0.5, 0.01)] {
            let cfg = OptimizerConfig {
                learning_rate: lr,
                weight_decay: wd,
                clip_norm: None,
                ..Default::default()
            };
            let mut st = OptimizerState::new(cfg, 1);
            let mut p = [theta0];
            for g in grads {
                st.step(&mut p, &[g], lr);
            }
            assert!((p[0] - reference(theta0, &grads, lr, wd)).abs() < 1e-9);
            assert_eq!(st.step_count, grads.len() as u64);
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut st = OptimizerState::new(OptimizerConfig::default(), 3);
        let mut p = [0.1, -0.7, 3.0];
        let before = p;
        st.step(&mut p, &[1.0, 2.0, -3.0], 0.0);
        assert_eq!(p.map(f64::to_bits), before.map(f64::to_bits));
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let st = OptimizerState::new(OptimizerConfig::default(), 2);
        let mut g = [3.0, 4.0];
        assert_eq!(st.clip(&mut g), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        let mut small = [0.3, 0.4];
        st.clip(&mut small);
        assert_eq!(small, [0.3, 0.4]);
    }

    #[test]
    fn linear_decay_reaches_zero() {
        let cfg = OptimizerConfig {
            linear_decay: true,
            ..Default::default()
        };
        assert_eq!(cfg.lr_at(0, 10), cfg.learning_rate);
        assert!((cfg.lr_at(5, 10) - cfg.learning_rate / 2.0).abs() < 1e-15);
        assert!(OptimizerConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
    }
}
