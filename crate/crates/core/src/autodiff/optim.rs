use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::graph::Matrix;
use super::params::{GradStore, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// `base_lr * warmup^0.5 * min(step^-0.5, step * warmup^-1.5)`; peaks at `base_lr`
    /// when `step == warmup`.
    Noam,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    pub base_lr: f64,
    pub schedule: Schedule,
}

impl Default for OptimizerConfig {
    /// Adam with a Noam warmup of 4000 steps peaking at 1e-3.
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-9,
            warmup_steps: 4000,
            base_lr: 1e-3,
            schedule: Schedule::Noam,
        }
    }
}

impl OptimizerConfig {
    /// Stage-II settings: same moments, constant 1e-3, no warmup.
    pub fn constant(lr: f64) -> Self {
        Self {
            base_lr: lr,
            schedule: Schedule::Constant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0 {
            return Err(Error::Config("warmup_steps must be positive".into()));
        }
        if !(0.0 < self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::Config("need 0 < beta1 < beta2 < 1".into()));
        }
        if !(self.base_lr > 0.0 && self.eps > 0.0) {
            return Err(Error::Config("learning rate and eps must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for 1-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.base_lr,
            Schedule::Noam => noam_lr(step, self.warmup_steps, self.base_lr),
        }
    }
}

pub fn noam_lr(step: usize, warmup: usize, base_lr: f64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup as f64;
    base_lr * w.sqrt() * (s.powf(-0.5)).min(s * w.powf(-1.5))
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: OptimizerConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: usize,
}

impl Adam {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|(_, _, v)| Array2::zeros(v.dim())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Applies one update and returns the learning rate used.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradStore) -> f64 {
        self.step += 1;
        let lr = self.config.lr_at(self.step);
        let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads.get(id);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let p = params.get_mut(id);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            });
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::nn::Ctx;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn noam_peaks_at_warmup() {
        let peak = noam_lr(4000, 4000, 1e-3);
        assert!((peak - 1e-3).abs() < 1e-15);
        assert!(noam_lr(3999, 4000, 1e-3) < peak);
        assert!(noam_lr(4001, 4000, 1e-3) < peak);
    }

    #[test]
    fn default_config_is_valid() {
        let c = OptimizerConfig::default();
        c.validate().unwrap();
        assert_eq!(c.warmup_steps, 4000);
        assert_eq!((c.beta1, c.beta2), (0.9, 0.999));
    }

    #[test]
    fn rejects_bad_betas() {
        let c = OptimizerConfig {
            beta1: 0.999,
            beta2: 0.9,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", array![[3.0, -2.0]]);
        let mut opt = Adam::new(OptimizerConfig::constant(0.05), &store);
        for _ in 0..500 {
            let mut cx = Ctx::eval(&store);
            let x = cx.p(id);
            let sq = cx.g.square(x);
            let loss = cx.g.sum_all(sq);
            let grads = cx.g.backward(loss);
            let mut acc = GradStore::zeros_like(&store);
            acc.accumulate(&cx.g, &grads);
            drop(cx);
            opt.step(&mut store, &acc);
        }
        assert!(store.get(id).iter().all(|v| v.abs() < 1e-2));
    }

    proptest! {
        #[test]
        fn noam_rises_then_falls(step in 1usize..20000) {
            let lr = |s| noam_lr(s, 4000, 1e-3);
            if step < 4000 {
                prop_assert!(lr(step) < lr(step + 1));
            } else {
                prop_assert!(lr(step) > lr(step + 1));
            }
        }
    }
}
