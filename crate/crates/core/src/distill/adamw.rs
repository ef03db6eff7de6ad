//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `params` and `grads` must keep the same order and shapes
    /// from call to call.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::Shape("parameter and gradient lists do not match".into()));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
            return Err(Error::Shape("parameter layout changed between optimizer steps".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                p[i] -= lr * self.weight_decay * p[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_scalar_reference_for_three_steps() {
        // f(x) = (x - 3)², gradient 2(x - 3)
        let (lr, b1, b2, eps, wd) = (0.1, 0.9, 0.999, 1e-8, 0.01);
        let mut opt = AdamW::new(lr, b1, b2, eps, wd);
        let mut x = [1.0f64];
        let (mut rx, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * (x[0] - 3.0);
            opt.step(vec![&mut x[..]], &[vec![g]]).unwrap();

            let rg = 2.0 * (rx - 3.0);
            rx *= 1.0 - lr * wd;
            m = b1 * m + (1.0 - b1) * rg;
            v = b2 * v + (1.0 - b2) * rg * rg;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            rx -= lr * mhat / (vhat.sqrt() + eps);
            assert_eq!(x[0], rx, "step {t}");
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut opt = AdamW::new(0.0, 0.9, 0.999, 1e-8, 0.01);
        let mut p = vec![0.5, -2.0];
        opt.step(vec![&mut p[..]], &[vec![1.0, 3.0]]).unwrap();
        assert_eq!(p, vec![0.5, -2.0]);
    }

    #[test]
    fn layout_changes_are_rejected() {
        let mut opt = AdamW::new(0.1, 0.9, 0.999, 1e-8, 0.0);
        let mut p = vec![0.0; 2];
        opt.step(vec![&mut p[..]], &[vec![1.0, 1.0]]).unwrap();
        let mut q = vec![0.0; 3];
        assert!(opt.step(vec![&mut q[..]], &[vec![1.0; 3]]).is_err());
    }
}
