//! AdamW with a linear warmup/decay schedule, applied lazily to the
//! parameters touched by each minibatch.

use serde::{Deserialize, Serialize};

/// Linear warmup to the base rate, then linear decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let remaining = self.total_steps.saturating_sub(step) as f64;
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        self.base_lr * (remaining / span).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    /// Step at which each parameter was last updated, for lazy bias correction.
    steps: Vec<u32>,
}

impl AdamW {
    pub fn new(n_params: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            steps: vec![0; n_params],
        }
    }

    /// Update every parameter in `touched` using `grads[i]`.
    pub fn step(&mut self, params: &mut [f32], grads: &[f32], touched: &[u32], lr: f64) {
        for &i in touched {
            let i = i as usize;
            let g = grads[i] as f64;
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let m = self.beta1 * self.m[i] as f64 + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.v[i] as f64 + (1.0 - self.beta2) * g * g;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            let m_hat = m / (1.0 - self.beta1.powi(t));
            let v_hat = v / (1.0 - self.beta2.powi(t));
            let mut p = params[i] as f64;
            p -= lr * self.weight_decay * p;
            p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            params[i] = p as f32;
        }
    }
}

/// Dense gradient buffer that remembers which slots are non-zero.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    pub grads: Vec<f32>,
    pub touched: Vec<u32>,
    flags: Vec<bool>,
}

impl GradBuffer {
    pub fn new(n: usize) -> Self {
        Self { grads: vec![0.0; n], touched: Vec::new(), flags: vec![false; n] }
    }

    pub fn add(&mut self, idx: u32, g: f32) {
        let i = idx as usize;
        if !self.flags[i] {
            self.flags[i] = true;
            self.touched.push(idx);
        }
        self.grads[i] += g;
    }

    pub fn scale(&mut self, factor: f32) {
        for &i in &self.touched {
            self.grads[i as usize] *= factor;
        }
    }

    pub fn clear(&mut self) {
        for &i in &self.touched {
            self.grads[i as usize] = 0.0;
            self.flags[i as usize] = false;
        }
        self.touched.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = LinearSchedule { base_lr: 1.0, warmup_steps: 4, total_steps: 12 };
        assert_eq!(s.lr(0), 0.25);
        assert_eq!(s.lr(3), 1.0);
        assert_eq!(s.lr(4), 1.0);
        assert_eq!(s.lr(8), 0.5);
        assert_eq!(s.lr(12), 0.0);
        assert_eq!(s.lr(40), 0.0);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // f(x) = (x - 3)^2
        let mut params = vec![0.0f32];
        let mut opt = AdamW::new(1, 0.0);
        for _ in 0..2000 {
            let g = 2.0 * (params[0] - 3.0);
            opt.step(&mut params, &[g], &[0], 0.01);
        }
        assert!((params[0] - 3.0).abs() < 1e-2, "{}", params[0]);
    }

    #[test]
    fn grad_buffer_tracks_touched() {
        let mut b = GradBuffer::new(4);
        b.add(2, 1.0);
        b.add(2, 0.5);
        b.add(0, -1.0);
        assert_eq!(b.touched, vec![2, 0]);
        assert_eq!(b.grads[2], 1.5);
        b.clear();
        assert!(b.touched.is_empty());
        assert_eq!(b.grads, vec![0.0; 4]);
    }
}
