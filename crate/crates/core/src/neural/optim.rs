use serde::{Deserialize, Serialize};

use super::{Freeze, Parameterized};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of the run spent ramping the rate up linearly from zero.
    #[serde(default)]
    pub warmup: f64,
    /// Decay the rate linearly to zero after warmup.
    #[serde(default)]
    pub linear_decay: bool,
}

impl OptimConfig {
    /// Learning rate used with pretrained BERT-size encoders.
    pub const PRETRAINED_LR: f64 = 3e-5;
}

impl Default for OptimConfig {
    /// 1e-3 suits the small from-scratch encoders here; 3e-5
    /// ([`OptimConfig::PRETRAINED_LR`]) underfits them.
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup: 0.1,
            linear_decay: true,
        }
    }
}

/// AdamW with decoupled weight decay. Moment buffers are allocated on the
/// first step to match the model's tensors.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: OptimConfig,
    steps: u64,
    total_steps: Option<u64>,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: OptimConfig) -> Self {
        AdamW {
            config,
            steps: 0,
            total_steps: None,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Enables the warmup and decay schedule over a run of `total` steps.
    /// Without it the rate stays constant.
    pub fn with_total_steps(mut self, total: u64) -> Self {
        self.total_steps = Some(total);
        self
    }

    /// Multiplier on the base rate at 1-based step `step`.
    pub fn lr_scale(&self, step: u64) -> f64 {
        let Some(total) = self.total_steps else {
            return 1.0;
        };
        let warm = (self.config.warmup.clamp(0.0, 1.0) * total as f64).ceil() as u64;
        if step <= warm {
            step as f64 / warm as f64
        } else if self.config.linear_decay && total > warm {
            ((total + 1).saturating_sub(step) as f64 / (total - warm) as f64).clamp(0.0, 1.0)
        } else {
            1.0
        }
    }

    pub fn step<M: Parameterized<T>>(&mut self, model: &mut M, grads: &M) -> Result<()> {
        let infos: Vec<_> = model.params().into_iter().map(|(i, t)| (i, t.len())).collect();
        let gvals: Vec<(_, &[T])> = grads.params();
        if infos.len() != gvals.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors but {} gradient tensors",
                infos.len(),
                gvals.len()
            )));
        }
        for ((info, len), (ginfo, g)) in infos.iter().zip(&gvals) {
            if *len != g.len() || info.shape != ginfo.shape {
                return Err(Error::Shape(format!(
                    "gradient for {} has shape {:?}, parameter has {:?}",
                    info.name, ginfo.shape, info.shape
                )));
            }
        }
        if self.first.is_empty() {
            self.first = infos.iter().map(|(_, n)| vec![T::zero(); *n]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != infos.len() {
            return Err(Error::Shape("optimizer state belongs to a different model".into()));
        }

        self.steps += 1;
        let c = &self.config;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one = T::one();
        let lr = T::lit(c.lr * self.lr_scale(self.steps));
        let wd = T::lit(c.weight_decay);
        let eps = T::lit(c.eps);
        let bc1 = one - b1.powi(self.steps as i32);
        let bc2 = one - b2.powi(self.steps as i32);

        for (t, param) in model.params_mut().into_iter().enumerate() {
            let (info, _) = &infos[t];
            if info.freeze == Freeze::All {
                continue;
            }
            let width = info.row_width();
            let g = gvals[t].1;
            let m = &mut self.first[t];
            let v = &mut self.second[t];
            for i in 0..param.len() {
                if info.freeze != Freeze::None && info.freeze.is_frozen(i, width) {
                    continue;
                }
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * param[i]);
            }
        }
        Ok(())
    }
}
