//! AdamW with decoupled weight decay and the warmup/linear-decay schedule.

use serde::{Deserialize, Serialize};

use crate::error::{GsptError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak_lr: f64,
    pub end_lr: f64,
    pub warmup_updates: u64,
}

impl Schedule {
    pub fn validate(&self, total: u64) -> Result<()> {
        if !(self.end_lr > 0.0 && self.end_lr <= self.peak_lr) {
            return Err(GsptError::config(format!(
                "need 0 < end_lr <= peak_lr, got end_lr={} peak_lr={}",
                self.end_lr, self.peak_lr
            )));
        }
        if total < self.warmup_updates {
            return Err(GsptError::config(format!(
                "total steps {total} fewer than warmup_updates {}",
                self.warmup_updates
            )));
        }
        Ok(())
    }

    /// Linear `0 -> peak` over `[0, warmup]`, then linear `peak -> end` over
    /// `(warmup, total]`.
    pub fn lr_at_step(&self, t: u64, total: u64) -> f64 {
        let t = t.min(total);
        if t <= self.warmup_updates {
            if self.warmup_updates == 0 {
                return self.peak_lr;
            }
            return self.peak_lr * t as f64 / self.warmup_updates as f64;
        }
        let span = (total - self.warmup_updates) as f64;
        let frac = (t - self.warmup_updates) as f64 / span;
        self.peak_lr + (self.end_lr - self.peak_lr) * frac
    }
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    /// Updates applied so far.
    pub t: u64,
    pub weight_decay: f64,
    decay: Vec<bool>,
}

impl AdamW {
    pub fn new(len: usize, weight_decay: f64, decay: Vec<bool>) -> Self {
        assert_eq!(decay.len(), len);
        AdamW {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            weight_decay,
            decay,
        }
    }

    /// One update `w <- w - lr (m̂ / (sqrt(v̂) + eps) + λ w)`, with `λ` only on
    /// decayed tensors.
    pub fn step(&mut self, w: &mut [f32], g: &[f32], lr: f64) {
        assert_eq!(w.len(), self.m.len());
        assert_eq!(g.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let wd = lr * self.weight_decay;
        for i in 0..w.len() {
            let gi = g[i] as f64;
            let m = BETA1 * self.m[i] as f64 + (1.0 - BETA1) * gi;
            let v = BETA2 * self.v[i] as f64 + (1.0 - BETA2) * gi * gi;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            let mut wi = w[i] as f64;
            if self.decay[i] {
                wi -= wd * wi;
            }
            wi -= lr * (m / bc1) / ((v / bc2).sqrt() + EPS);
            w[i] = wi as f32;
        }
    }
}
