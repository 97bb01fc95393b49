use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd(momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { momentum }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    /// Decoupled weight decay coefficient (multiplied by the current learning rate).
    #[serde(default)]
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::adam(),
            weight_decay: 0.0,
            schedule: LrSchedule::Constant { base: lr },
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::sgd(momentum),
            weight_decay: 0.0,
            schedule: LrSchedule::Constant { base: lr },
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn build(&self, n_params: usize) -> OptimizerState {
        OptimizerState::new(self.kind, self.weight_decay, n_params)
    }
}

/// Per-parameter optimizer slots for one flat parameter vector.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    weight_decay: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, weight_decay: f64, n_params: usize) -> Self {
        let second = match kind {
            OptimizerKind::Adam { .. } => vec![0.0; n_params],
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Self {
            kind,
            weight_decay,
            first: vec![0.0; n_params],
            second,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Non-finite gradients abort without touching `params`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::dim(format!(
                "optimizer holds {} slots, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step: self.step as usize,
                what: format!("gradient entry {i} is {}", grads[i]),
            });
        }
        self.step += 1;
        let decay = lr * self.weight_decay;
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    *v = momentum * *v + g;
                    if decay != 0.0 {
                        *p -= decay * *p;
                    }
                    *p -= lr * *v;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    if decay != 0.0 {
                        *p -= decay * *p;
                    }
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant {
        base: f64,
    },
    /// Linear warmup from 0 to `base`, then half-cosine decay to 0 at `total`.
    CosineWithWarmup {
        base: f64,
        total: usize,
        warmup: usize,
    },
}

impl LrSchedule {
    pub fn cosine(base: f64, total: usize, warmup: usize) -> Result<Self> {
        if warmup > total {
            return Err(Error::config(format!(
                "warmup ({warmup}) exceeds total steps ({total})"
            )));
        }
        if base < 0.0 {
            return Err(Error::config("negative learning rate"));
        }
        Ok(LrSchedule::CosineWithWarmup {
            base,
            total,
            warmup,
        })
    }

    pub fn base(&self) -> f64 {
        match *self {
            LrSchedule::Constant { base } | LrSchedule::CosineWithWarmup { base, .. } => base,
        }
    }

    /// Learning rate at `step`; steps past the end clamp to the final value.
    pub fn lr_at(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant { base } => base,
            LrSchedule::CosineWithWarmup {
                base,
                total,
                warmup,
            } => {
                let step = step.min(total);
                if step < warmup {
                    return base * step as f64 / warmup as f64;
                }
                let span = total - warmup;
                if span == 0 {
                    return 0.0;
                }
                let progress = (step - warmup) as f64 / span as f64;
                (base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())).max(0.0)
            }
        }
    }
}
