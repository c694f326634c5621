use crate::error::{Error, Result};

/// Warmup-then-staircase learning rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    /// Learning rate starts at warmup_factor * base_lr.
    pub warmup_factor: f64,
    pub warmup_iters: usize,
    /// Multiplier applied at each decay step.
    pub decay_factor: f64,
    pub decay_steps: Vec<usize>,
    pub max_iters: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 1e-4,
            warmup_factor: 0.2,
            warmup_iters: 2000,
            decay_factor: 0.1,
            decay_steps: vec![14_000, 19_000],
            max_iters: 24_000,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !self.decay_steps.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation(
                "decay_steps must be strictly increasing".into(),
            ));
        }
        if self.decay_steps.iter().any(|&s| s >= self.max_iters) {
            return Err(Error::Validation(format!(
                "decay_steps {:?} must lie below max_iters {}",
                self.decay_steps, self.max_iters
            )));
        }
        if self.base_lr <= 0.0 || self.decay_factor <= 0.0 || self.warmup_factor < 0.0 {
            return Err(Error::Validation("learning rates must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate at an iteration: linear interpolation from
    /// warmup_factor * base to base over the warmup, then base times
    /// decay_factor per decay step passed.
    pub fn lr_at_iter(&self, iter: usize) -> f64 {
        if iter < self.warmup_iters {
            let progress = iter as f64 / self.warmup_iters as f64;
            self.base_lr * (self.warmup_factor + (1.0 - self.warmup_factor) * progress)
        } else {
            let decays = self.decay_steps.iter().filter(|&&s| iter >= s).count();
            self.base_lr * self.decay_factor.powi(decays as i32)
        }
    }
}
