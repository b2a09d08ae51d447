use serde::{Deserialize, Serialize};

use super::NnError;
use crate::autodiff::Tensor;

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Length of the first cosine cycle, in steps.
    pub t0: usize,
    pub t_mult: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: 1e-3, weight_decay: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8, t0: 100, t_mult: 2 }
    }
}

/// Cosine annealing with warm restarts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineWarmRestarts {
    pub base: f64,
    pub cycle_len: usize,
    pub t_mult: usize,
    /// Position inside the current cycle.
    pub t: usize,
}

impl CosineWarmRestarts {
    pub fn new(base: f64, t0: usize, t_mult: usize) -> Self {
        CosineWarmRestarts { base, cycle_len: t0.max(1), t_mult: t_mult.max(1), t: 0 }
    }

    /// `base/2 * (1 + cos(pi t / T))`.
    pub fn lr_at(base: f64, t: usize, cycle_len: usize) -> f64 {
        base / 2.0 * (1.0 + (std::f64::consts::PI * t as f64 / cycle_len as f64).cos())
    }

    pub fn lr(&self) -> f64 {
        Self::lr_at(self.base, self.t, self.cycle_len)
    }

    pub fn advance(&mut self) {
        self.t += 1;
        if self.t >= self.cycle_len {
            self.t = 0;
            self.cycle_len *= self.t_mult;
        }
    }
}

/// AdamW with decoupled weight decay, driven by a cosine schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: OptimConfig,
    pub schedule: CosineWarmRestarts,
    pub step: u64,
    pub skipped: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: OptimConfig, shapes: &[usize]) -> Self {
        let schedule = CosineWarmRestarts::new(config.lr, config.t0, config.t_mult);
        AdamW {
            config,
            schedule,
            step: 0,
            skipped: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Apply one update at the scheduled rate; returns `false` when a
    /// non-finite gradient made it skip the step.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<bool, NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::Shape(format!("{} params, {} grads, {} slots", params.len(), grads.len(), self.m.len())));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(NnError::Shape(format!("parameter of size {} got gradient of size {}", p.len(), g.len())));
            }
        }
        let lr = self.schedule.lr();
        self.schedule.advance();
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            log::warn!("skipping optimizer step {} after a non-finite gradient", self.step + 1);
            return Ok(false);
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let decay = 1.0 - lr * c.weight_decay;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &d), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *w *= decay;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * d;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * d * d;
                *w -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(lr: f64, wd: f64) -> OptimConfig {
        // huge first cycle keeps the rate nearly constant
        OptimConfig { lr, weight_decay: wd, t0: 1_000_000_000, ..Default::default() }
    }

    #[test]
    fn schedule_landmarks() {
        assert_eq!(CosineWarmRestarts::lr_at(1e-3, 0, 100), 1e-3);
        assert!(CosineWarmRestarts::lr_at(1e-3, 100, 100).abs() < 1e-18);
        assert!((CosineWarmRestarts::lr_at(1e-3, 50, 100) - 5e-4).abs() < 1e-15);
        let mut s = CosineWarmRestarts::new(1.0, 3, 2);
        let mut seen = Vec::new();
        for _ in 0..10 {
            seen.push((s.t, s.cycle_len));
            assert!((0.0..=1.0).contains(&s.lr()));
            s.advance();
        }
        assert_eq!(&seen[..5], &[(0, 3), (1, 3), (2, 3), (0, 6), (1, 6)]);
        assert_eq!(seen[9], (0, 12));
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let before = p.clone();
        let mut opt = AdamW::new(flat(1e-2, 0.0), &[3]);
        opt.step(&mut [&mut p], &[Tensor::zeros(vec![3])]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut p = Tensor::vector(vec![0.0]);
        let mut opt = AdamW::new(flat(1e-2, 0.0), &[1]);
        for _ in 0..100 {
            opt.step(&mut [&mut p], &[Tensor::vector(vec![3.0])]).unwrap();
        }
        assert!(p.data()[0] < -0.5);
    }

    #[test]
    fn matches_scalar_reference() {
        let (lr, wd, b1, b2, eps) = (0.05, 0.1, 0.9, 0.999, 1e-8);
        let grad = |x: f64| 2.0 * (x - 1.5) + 0.3 * x.sin();
        let (mut x, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        let mut p = Tensor::vector(vec![0.7]);
        let mut opt = AdamW::new(flat(lr, wd), &[1]);
        for t in 1..=10 {
            let lr_t = CosineWarmRestarts::lr_at(lr, t - 1, 1_000_000_000);
            let g = grad(x);
            x *= 1.0 - lr_t * wd;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr_t * (m / (1.0 - b1.powi(t as i32))) / ((v / (1.0 - b2.powi(t as i32))).sqrt() + eps);
            let g = Tensor::vector(vec![grad(p.data()[0])]);
            opt.step(&mut [&mut p], &[g]).unwrap();
            assert!((p.data()[0] - x).abs() < 1e-15, "step {t}");
        }
    }

    #[test]
    fn nan_gradient_skips_step() {
        let mut p = Tensor::vector(vec![1.0]);
        let mut opt = AdamW::new(flat(1e-2, 0.1), &[1]);
        assert!(!opt.step(&mut [&mut p], &[Tensor::vector(vec![f64::NAN])]).unwrap());
        assert_eq!(p.data(), &[1.0]);
        assert_eq!((opt.step, opt.skipped), (0, 1));
        assert!(opt.step(&mut [&mut p], &[Tensor::zeros(vec![2])]).is_err());
    }

    #[test]
    fn quadratic_smoke() {
        let center: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let scale: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let f = |x: &[f64]| -> f64 { x.iter().zip(&center).zip(&scale).map(|((a, c), s)| s * (a - c).powi(2)).sum() };
        let mut p = Tensor::zeros(vec![10]);
        let start = f(p.data());
        let mut opt = AdamW::new(OptimConfig { lr: 0.1, weight_decay: 0.0, t0: 200, ..Default::default() }, &[10]);
        for _ in 0..200 {
            let g: Vec<f64> = p.data().iter().zip(&center).zip(&scale).map(|((a, c), s)| 2.0 * s * (a - c)).collect();
            opt.step(&mut [&mut p], &[Tensor::vector(g)]).unwrap();
        }
        assert!(f(p.data()) <= 0.01 * start, "{} vs {start}", f(p.data()));
    }
}
