use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Step count published for the reference continued-pretraining run
/// (193M effective tokens, about 3 epochs, batch 64, context 8192). It does not
/// reconcile with [`steps_for_tokens`], which gives 1105 for those inputs, so
/// it is kept for reporting only.
pub const REFERENCE_PRETRAIN_STEPS: u64 = 1400;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("warmup steps ({warmup}) must be below total steps ({total})")]
    WarmupTooLong { warmup: u64, total: u64 },
    #[error("min_lr ({min}) exceeds peak_lr ({peak})")]
    MinAbovePeak { min: f64, peak: f64 },
    #[error("step {step} is past the end of a {total}-step schedule")]
    StepOutOfRange { step: u64, total: u64 },
}

/// `ceil(x)` that treats values within rounding noise of an integer as that
/// integer, so 16700 × 3.2 / 32 is 1670 and not 1671.
fn ceil_tolerant(x: f64) -> u64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest as u64
    } else {
        x.ceil() as u64
    }
}

fn positive(value: f64, what: &'static str) -> Result<f64, ScheduleError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ScheduleError::NonPositive(what))
    }
}

/// Optimizer steps to consume `epochs` passes over `total_effective_tokens`
/// with `batch_size` sequences of `context_length` tokens per step.
pub fn steps_for_tokens(
    total_effective_tokens: f64,
    epochs: f64,
    batch_size: u64,
    context_length: u64,
) -> Result<u64, ScheduleError> {
    positive(total_effective_tokens, "total_effective_tokens")?;
    positive(epochs, "epochs")?;
    positive(batch_size as f64, "batch_size")?;
    positive(context_length as f64, "context_length")?;
    Ok(ceil_tolerant(
        epochs * total_effective_tokens / (batch_size as f64 * context_length as f64),
    ))
}

/// Optimizer steps for `epochs` passes over `samples` padded samples.
pub fn steps_for_samples(samples: u64, epochs: f64, batch_size: u64) -> Result<u64, ScheduleError> {
    positive(samples as f64, "samples")?;
    positive(epochs, "epochs")?;
    positive(batch_size as f64, "batch_size")?;
    Ok(ceil_tolerant(samples as f64 * epochs / batch_size as f64))
}

/// Linear warmup from zero, then cosine decay to `min_lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub min_lr: f64,
    pub batch_size: u64,
    pub context_length: u64,
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        positive(self.total_steps as f64, "total_steps")?;
        positive(self.peak_lr, "peak_lr")?;
        positive(self.batch_size as f64, "batch_size")?;
        positive(self.context_length as f64, "context_length")?;
        if self.warmup_steps >= self.total_steps {
            return Err(ScheduleError::WarmupTooLong {
                warmup: self.warmup_steps,
                total: self.total_steps,
            });
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.peak_lr) {
            return Err(ScheduleError::MinAbovePeak {
                min: self.min_lr,
                peak: self.peak_lr,
            });
        }
        Ok(())
    }

    pub fn lr_at_step(&self, step: u64) -> Result<f64, ScheduleError> {
        lr_at_step(step, self)
    }

    /// Learning rate for every step `0..=total_steps`.
    pub fn table(&self) -> Vec<f64> {
        (0..=self.total_steps)
            .map(|s| lr_at_step(s, self).expect("step within range"))
            .collect()
    }
}

pub fn lr_at_step(step: u64, sched: &TrainingSchedule) -> Result<f64, ScheduleError> {
    if step > sched.total_steps {
        return Err(ScheduleError::StepOutOfRange {
            step,
            total: sched.total_steps,
        });
    }
    if sched.warmup_steps > 0 && step <= sched.warmup_steps {
        return Ok(sched.peak_lr * step as f64 / sched.warmup_steps as f64);
    }
    let progress = (step - sched.warmup_steps) as f64 / (sched.total_steps - sched.warmup_steps) as f64;
    Ok(sched.min_lr + 0.5 * (sched.peak_lr - sched.min_lr) * (1.0 + (PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pretrain() -> TrainingSchedule {
        TrainingSchedule {
            total_steps: 1400,
            warmup_steps: 140,
            peak_lr: 1e-5,
            min_lr: 0.0,
            batch_size: 64,
            context_length: 8192,
        }
    }

    #[test]
    fn step_counts() {
        // ceil(3 × 193e6 / 524288) = ceil(1104.35)
        assert_eq!(steps_for_tokens(193e6, 3.0, 64, 8192).unwrap(), 1105);
        assert_eq!(steps_for_samples(16_700, 3.2, 32).unwrap(), 1670);
        assert_eq!(steps_for_tokens(1.0, 1.0, 1, 1).unwrap(), 1);
        assert_eq!(
            steps_for_tokens(0.0, 1.0, 1, 1),
            Err(ScheduleError::NonPositive("total_effective_tokens"))
        );
        assert_eq!(
            steps_for_samples(10, 1.0, 0),
            Err(ScheduleError::NonPositive("batch_size"))
        );
    }

    #[test]
    fn lr_checkpoints() {
        let s = pretrain();
        assert_eq!(s.lr_at_step(0).unwrap(), 0.0);
        assert!((s.lr_at_step(140).unwrap() - 1e-5).abs() < 1e-12);
        assert!((s.lr_at_step(770).unwrap() - 5e-6).abs() < 1e-12);
        assert!(s.lr_at_step(1400).unwrap().abs() < 1e-12);
        assert_eq!(
            s.lr_at_step(1401),
            Err(ScheduleError::StepOutOfRange {
                step: 1401,
                total: 1400
            })
        );
    }

    #[test]
    fn no_warmup_starts_at_peak() {
        let s = TrainingSchedule {
            warmup_steps: 0,
            ..pretrain()
        };
        assert_eq!(s.lr_at_step(0).unwrap(), 1e-5);
    }

    #[test]
    fn validation() {
        assert!(pretrain().validate().is_ok());
        let bad = TrainingSchedule {
            warmup_steps: 1400,
            ..pretrain()
        };
        assert!(matches!(bad.validate(), Err(ScheduleError::WarmupTooLong { .. })));
        let bad = TrainingSchedule {
            min_lr: 1.0,
            ..pretrain()
        };
        assert!(matches!(bad.validate(), Err(ScheduleError::MinAbovePeak { .. })));
    }
}
