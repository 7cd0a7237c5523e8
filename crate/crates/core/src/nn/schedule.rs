//! Milestone-based learning-rate schedule.

use crate::error::{Error, Result};

/// Multiplicative milestone schedule: the rate at epoch `e` is the initial
/// rate times the factors of every milestone whose epoch is `<= e`.
#[derive(Debug, Clone, PartialEq)]
pub struct LRSchedule {
    initial_lr: f64,
    /// (epoch, factor), sorted by epoch.
    milestones: Vec<(usize, f64)>,
}

impl LRSchedule {
    pub fn new(initial_lr: f64, mut milestones: Vec<(usize, f64)>) -> Result<Self> {
        if initial_lr <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "initial learning rate must be positive, got {initial_lr}"
            )));
        }
        if let Some((e, f)) = milestones.iter().find(|(_, f)| *f <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "milestone ({e}, {f}) has a nonpositive factor"
            )));
        }
        milestones.sort_by_key(|(e, _)| *e);
        Ok(Self { initial_lr, milestones })
    }

    pub fn constant(lr: f64) -> Result<Self> {
        Self::new(lr, Vec::new())
    }

    /// Defaults used across the experiment presets: 1e-3, divided by 10 at
    /// epochs 80, 120 and 160, then halved at 180.
    pub fn standard() -> Self {
        Self::new(1e-3, vec![(80, 0.1), (120, 0.1), (160, 0.1), (180, 0.5)])
            .expect("standard schedule is valid")
    }

    pub fn initial_lr(&self) -> f64 {
        self.initial_lr
    }

    pub fn milestones(&self) -> &[(usize, f64)] {
        &self.milestones
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = self.initial_lr;
        for &(e, factor) in &self.milestones {
            if epoch >= e {
                lr *= factor;
            }
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_schedule_values() {
        let s = LRSchedule::standard();
        let cases = [
            (0, 1e-3),
            (79, 1e-3),
            (80, 1e-4),
            (119, 1e-4),
            (120, 1e-5),
            (159, 1e-5),
            (160, 1e-6),
            (179, 1e-6),
            (180, 5e-7),
            (500, 5e-7),
        ];
        for (e, expected) in cases {
            let lr = s.lr_at(e);
            assert!(
                (lr - expected).abs() <= 1e-18 + 1e-12 * expected,
                "epoch {e}: {lr} vs {expected}"
            );
        }
    }

    #[test]
    fn nonincreasing_when_factors_at_most_one() {
        let s = LRSchedule::new(0.5, vec![(3, 0.5), (10, 1.0), (7, 0.2)]).unwrap();
        let mut prev = f64::INFINITY;
        for e in 0..20 {
            let lr = s.lr_at(e);
            assert!(lr <= prev + 1e-18);
            prev = lr;
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(LRSchedule::new(0.0, vec![]).is_err());
        assert!(LRSchedule::new(1e-3, vec![(5, 0.0)]).is_err());
    }
}
