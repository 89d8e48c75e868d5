//! Learning-rate schedule: linear warmup into cosine annealing.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LrSchedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub base_lr: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: usize, warmup_frac: f64) -> Self {
        assert!(total_steps >= 1);
        assert!((0.0..1.0).contains(&warmup_frac));
        let warmup_steps =
            ((warmup_frac * total_steps as f64).ceil() as usize).min(total_steps - 1);
        LrSchedule {
            total_steps,
            warmup_steps,
            base_lr,
        }
    }

    /// Linear ramp 0 -> base over the warmup, then
    /// base * 0.5 * (1 + cos(pi * t)) with t = (step-warmup)/(total-warmup).
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return Err(Error::contract(
                "lr_at",
                format!("step {step} out of range (total {})", self.total_steps),
            ));
        }
        if step < self.warmup_steps {
            return Ok(self.base_lr * step as f64 / self.warmup_steps as f64);
        }
        let t = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        Ok(self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_starts_at_zero_and_peaks_at_base() {
        let s = LrSchedule::new(5e-4, 100_000, 0.05);
        assert_eq!(s.lr_at(0).unwrap(), 0.0);
        assert_eq!(s.lr_at(s.warmup_steps).unwrap(), 5e-4);
    }

    #[test]
    fn last_step_is_tiny() {
        let s = LrSchedule::new(5e-4, 100_000, 0.05);
        let last = s.lr_at(s.total_steps - 1).unwrap();
        assert!(last < 1e-6 * s.base_lr, "last lr {last}");
    }

    #[test]
    fn continuous_at_warmup_boundary() {
        let s = LrSchedule::new(5e-4, 10_000, 0.05);
        let before = s.lr_at(s.warmup_steps - 1).unwrap();
        let at = s.lr_at(s.warmup_steps).unwrap();
        // one step short of the peak in the ramp
        let expected_before = s.base_lr * (s.warmup_steps as f64 - 1.0) / s.warmup_steps as f64;
        assert!((before - expected_before).abs() < 1e-18);
        assert!((at - s.base_lr).abs() / s.base_lr < 1e-12);
    }

    #[test]
    fn monotone_nonincreasing_after_warmup() {
        let s = LrSchedule::new(1e-3, 500, 0.1);
        let mut prev = f64::INFINITY;
        for step in s.warmup_steps..s.total_steps {
            let lr = s.lr_at(step).unwrap();
            assert!(lr <= prev + 1e-18);
            prev = lr;
        }
    }

    #[test]
    fn out_of_range_step_errors() {
        let s = LrSchedule::new(1e-3, 10, 0.0);
        assert!(s.lr_at(10).is_err());
        assert!(s.lr_at(9).is_ok());
    }

    #[test]
    fn tiny_runs_keep_warmup_below_total() {
        let s = LrSchedule::new(1e-3, 2, 0.9);
        assert_eq!(s.warmup_steps, 1);
        assert!(s.lr_at(1).unwrap() > 0.0);
    }
}
