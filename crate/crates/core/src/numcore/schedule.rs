use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Step decay: `base_lr * decay_factor^(iter / decay_every)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            decay_factor: 0.98,
            decay_every: 1000,
        }
    }
}

impl LrSchedule {
    pub fn new(base_lr: f64, decay_factor: f64, decay_every: u64) -> Result<Self> {
        let s = Self {
            base_lr,
            decay_factor,
            decay_every,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(invalid(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(invalid(format!(
                "decay_factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_every == 0 {
            return Err(invalid("decay_every must be positive"));
        }
        Ok(())
    }
}

pub fn lr_at(schedule: &LrSchedule, iter: u64) -> f64 {
    let k = (iter / schedule.decay_every) as i32;
    schedule.base_lr * schedule.decay_factor.powi(k)
}
