//! AdamW with linear warmup followed by inverse-square-root decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, warmup: 100 }
    }
}

/// `base · min((s+1)/W, sqrt(W/(s+1)))` for zero-based step `s`.
pub fn scheduled_lr(base: f64, step: u64, warmup: u64) -> f64 {
    let s = (step + 1) as f64;
    let w = warmup.max(1) as f64;
    base * (s / w).min((w / s).sqrt())
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Gradients,
    v: Gradients,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        Self { config, m: Gradients::zeros_like(store), v: Gradients::zeros_like(store), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter for which `trainable` holds. Returns the
    /// learning rate used.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, trainable: impl Fn(ParamId) -> bool) -> Result<f64> {
        if grads.len() != store.len() {
            return Err(Error::Shape("gradients do not match the parameter store".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
        let c = self.config;
        let lr = scheduled_lr(c.lr, self.step, c.warmup);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (id, p) in store.iter_mut() {
            if !trainable(id) {
                continue;
            }
            let decay = if p.decay { c.weight_decay } else { 0.0 };
            let g = grads.get(id).data();
            let m = self.m.get_mut(id).data_mut();
            let v = self.v.get_mut(id).data_mut();
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *w -= lr * decay * *w;
                *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            }
        }
        if !store.is_finite() {
            return Err(Error::NonFinite("parameters after update".into()));
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(x: f64, decay: bool) -> ParamStore {
        let mut s = ParamStore::new();
        s.push("w", Tensor::scalar(x), decay);
        s
    }

    #[test]
    fn schedule_formula() {
        assert_eq!(scheduled_lr(1.0, 0, 100), 0.01);
        assert!((scheduled_lr(1.0, 99, 100) - 1.0).abs() < 1e-15);
        assert!((scheduled_lr(1.0, 399, 100) - 0.5).abs() < 1e-15);
        assert_eq!(scheduled_lr(2.0, 0, 0), 2.0);
    }

    #[test]
    fn zero_gradients_leave_params() {
        let mut s = scalar_store(0.7, true);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &s);
        let g = Gradients::zeros_like(&s);
        for _ in 0..5 {
            opt.step(&mut s, &g, |_| true).unwrap();
        }
        assert_eq!(s.get(ParamId(0)).item(), 0.7);
    }

    #[test]
    fn scalar_trace_matches_reference() {
        let cfg = AdamWConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.1, warmup: 2 };
        let mut s = scalar_store(1.0, true);
        let mut opt = AdamW::new(cfg, &s);
        let grads = [0.5, -0.2, 0.3];
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (i, &g) in grads.iter().enumerate() {
            let lr = 0.1 * ((i as f64 + 1.0) / 2.0).min((2.0 / (i as f64 + 1.0)).sqrt());
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(i as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(i as i32 + 1));
            w = w - lr * 0.1 * w - lr * mh / (vh.sqrt() + 1e-8);
            let mut gt = Gradients::zeros_like(&s);
            gt.get_mut(ParamId(0)).data_mut()[0] = g;
            opt.step(&mut s, &gt, |_| true).unwrap();
            assert!((s.get(ParamId(0)).item() - w).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradients_fail_fast() {
        let mut s = scalar_store(1.0, false);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(ParamId(0)).data_mut()[0] = f64::NAN;
        assert!(matches!(opt.step(&mut s, &g, |_| true), Err(Error::NonFinite(_))));
        assert_eq!(s.get(ParamId(0)).item(), 1.0);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut s = scalar_store(1.0, false);
        s.push("b", Tensor::scalar(1.0), false);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(ParamId(0)).data_mut()[0] = 1.0;
        g.get_mut(ParamId(1)).data_mut()[0] = 1.0;
        opt.step(&mut s, &g, |id| id == ParamId(1)).unwrap();
        assert_eq!(s.get(ParamId(0)).item(), 1.0);
        assert!(s.get(ParamId(1)).item() < 1.0);
    }
}
