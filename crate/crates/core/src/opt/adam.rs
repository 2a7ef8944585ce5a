use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::Scalar;

/// `lr(t) = min + ½(base − min)(1 + cos(π t / T))`, held at `min` past `T`.
pub fn cosine_lr(base_lr: f64, min_lr: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    if step >= total_steps {
        return min_lr;
    }
    let frac = step as f64 / total_steps as f64;
    min_lr + 0.5 * (base_lr - min_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.1,
            min_lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a fixed list of parameter groups plus the cosine schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub total_steps: usize,
    step: usize,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    lr_scale: Vec<f64>,
}

impl<T: Scalar> OptimizerState<T> {
    /// One group per entry of `sizes`, with per-group learning-rate multipliers.
    pub fn new(config: AdamConfig, total_steps: usize, sizes: &[usize], lr_scale: &[f64]) -> Result<Self> {
        if sizes.len() != lr_scale.len() {
            return invalid("one learning-rate scale per parameter group");
        }
        Ok(Self {
            config,
            total_steps,
            step: 0,
            first: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            lr_scale: lr_scale.to_vec(),
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Learning rate the next call to [`adam_step`](Self::adam_step) will use.
    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.config.base_lr, self.config.min_lr, self.step, self.total_steps)
    }

    /// Bias-corrected Adam update of every group, then advances the schedule.
    pub fn adam_step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return invalid(format!(
                "expected {} parameter groups, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            ));
        }
        for (g, (p, m)) in grads.iter().zip(params.iter().zip(&self.first)) {
            if p.len() != m.len() || g.len() != m.len() {
                return invalid("parameter/gradient shape mismatch");
            }
        }
        let lr = self.current_lr();
        let t = (self.step + 1) as i32;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one, e) = (T::one(), T::lit(eps));
        for (gi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let step_lr = T::lit(lr * self.lr_scale[gi]);
            let (c1, c2) = (T::lit(bc1), T::lit(bc2));
            let m = &mut self.first[gi];
            let v = &mut self.second[gi];
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = b1 * m[k] + (one - b1) * gk;
                v[k] = b2 * v[k] + (one - b2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= step_lr * mh / (vh.sqrt() + e);
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0.001, 0, 50), 0.1);
        assert_eq!(cosine_lr(0.1, 0.001, 50, 50), 0.001);
        assert!((cosine_lr(0.1, 0.0, 25, 50) - 0.05).abs() < 1e-15);
        assert_eq!(cosine_lr(0.1, 0.0, 3, 0), 0.1);
    }

    #[test]
    fn zero_gradients_leave_params() {
        let mut st = OptimizerState::<f64>::new(AdamConfig::default(), 10, &[3], &[1.0]).unwrap();
        let mut p = vec![1.0, -2.0, 3.0];
        for _ in 0..5 {
            st.adam_step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_by_hand() {
        let cfg = AdamConfig {
            base_lr: 0.1,
            ..AdamConfig::default()
        };
        let mut st = OptimizerState::<f64>::new(cfg, 100, &[1], &[1.0]).unwrap();
        let mut p = vec![0.0];
        st.adam_step(&mut [&mut p], &[&[1.0]]).unwrap();
        // m̂ = 1, v̂ = 1
        let expect = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - expect).abs() < 1e-15);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn shape_errors_and_determinism() {
        let mut a = OptimizerState::<f64>::new(AdamConfig::default(), 10, &[2], &[1.0]).unwrap();
        let mut p = vec![0.0, 0.0];
        assert!(a.adam_step(&mut [&mut p], &[&[1.0]]).is_err());
        assert!(OptimizerState::<f64>::new(AdamConfig::default(), 10, &[2], &[]).is_err());
        let mut b = a.clone();
        let mut q = p.clone();
        a.adam_step(&mut [&mut p], &[&[0.3, -0.2]]).unwrap();
        b.adam_step(&mut [&mut q], &[&[0.3, -0.2]]).unwrap();
        assert_eq!(p, q);
        assert_eq!(a, b);
    }
}
