use crate::error::{CovrError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state for a fixed list of parameter blocks.
#[derive(Debug, Clone)]
pub struct Adam {
    name: String,
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(name: impl Into<String>, config: AdamConfig, block_sizes: &[usize]) -> Self {
        Adam {
            name: name.into(),
            config,
            step: 0,
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(name: impl Into<String>, config: AdamConfig, params: &[&[f64]]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Adam::new(name, config, &sizes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected update. Nothing is modified when an error is returned.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(CovrError::dimension(
                format!("{} parameter blocks", self.name),
                self.m.len(),
                params.len().min(grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(CovrError::dimension(
                    format!("{} block {i}", self.name),
                    self.m[i].len(),
                    p.len().min(g.len()),
                ));
            }
            if p.iter().chain(g.iter()).any(|x| !x.is_finite()) {
                return Err(CovrError::non_finite(format!("{} block", self.name), i));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut opt = Adam::new("t", AdamConfig::default(), &[3]);
        opt.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut p = vec![0.0];
        let mut opt = Adam::new("t", AdamConfig::default(), &[1]);
        opt.step(&mut [&mut p], &[&[1.0]]).unwrap();
        let m1 = opt.first_moments()[0][0];
        opt.step(&mut [&mut p], &[&[0.0]]).unwrap();
        assert!((opt.first_moments()[0][0] - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig::default();
        let grads = [0.3, -4.0, 1e-3];
        let mut p = vec![0.0; 3];
        let mut opt = Adam::new("t", cfg, &[3]);
        opt.step(&mut [&mut p], &[&grads]).unwrap();
        for (pi, g) in p.iter().zip(grads) {
            let expected = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((pi - expected).abs() < 1e-15, "{pi} vs {expected}");
        }
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut p = vec![0.5];
        let mut opt = Adam::new("t", AdamConfig::with_lr(0.001), &[1]);
        let mut last = p[0];
        for _ in 0..2 {
            opt.step(&mut [&mut p], &[&[1.0]]).unwrap();
            assert!(p[0] < last);
            last = p[0];
        }
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut a = vec![0.0];
        let mut b = vec![0.0];
        let mut opt = Adam::new("critic", AdamConfig::default(), &[1, 1]);
        let err = opt
            .step(&mut [&mut a, &mut b], &[&[0.0], &[f64::INFINITY]])
            .unwrap_err();
        assert!(err.to_string().contains("critic block"));
        assert!(matches!(err, CovrError::NonFinite { index: 1, .. }));
        assert_eq!(opt.step_count(), 0);
    }
}
