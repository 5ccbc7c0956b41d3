//! First-order optimizers over flat parameter vectors.

use crate::scalar::Real;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize) -> Self {
        Self { beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8), m: vec![T::zero(); len], v: vec![T::zero(); len], t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: T) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Cosine decay from `base` at step 0 to `base * floor` at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize, floor: f64) -> f64 {
    if total <= 1 {
        return base;
    }
    let t = (step as f64 / (total - 1) as f64).min(1.0);
    let c = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
    base * (floor + (1.0 - floor) * c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut opt = Adam::<f64>::new(2);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.01], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = Adam::<f64>::new(3);
        let target = [0.3, -2.0, 5.0];
        let mut p = vec![0.0; 3];
        for it in 0..3000 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            opt.step(&mut p, &g, cosine_lr(0.05, it, 3000, 0.01));
        }
        for (a, b) in p.iter().zip(&target) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1.0, 0, 100, 0.0), 1.0);
        assert!(cosine_lr(1.0, 99, 100, 0.0).abs() < 1e-15);
        assert!((cosine_lr(1.0, 99, 100, 0.1) - 0.1).abs() < 1e-15);
    }
}
