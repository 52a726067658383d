use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "count")]
pub enum RampShape {
    #[default]
    Linear,
    Cosine,
    /// Piecewise constant with this many equal increments.
    Steps(u32),
}

/// Step-indexed β curve: rises from `beta_start` to `beta_end` over the
/// first `ramp_fraction` of training, then holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub ramp_fraction: f64,
    pub total_steps: u64,
    #[serde(default)]
    pub shape: RampShape,
}

impl BetaSchedule {
    pub fn new(beta_start: f64, beta_end: f64, ramp_fraction: f64, total_steps: u64) -> Result<Self> {
        let s = Self {
            beta_start,
            beta_end,
            ramp_fraction,
            total_steps,
            shape: RampShape::Linear,
        };
        s.validate()?;
        Ok(s)
    }

    /// The default annealing curve, 0.5 → 4.0 over the first half.
    pub fn annealed(total_steps: u64) -> Result<Self> {
        Self::new(0.5, 4.0, 0.5, total_steps)
    }

    pub fn constant(beta: f64, total_steps: u64) -> Result<Self> {
        Self::new(beta, beta, 1.0, total_steps)
    }

    pub fn with_shape(mut self, shape: RampShape) -> Result<Self> {
        self.shape = shape;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_start >= 0.0 && self.beta_end >= self.beta_start && self.beta_end.is_finite()) {
            return Err(Error::param(format!(
                "beta must rise from a nonnegative start, got {} → {}",
                self.beta_start, self.beta_end
            )));
        }
        if !(self.ramp_fraction > 0.0 && self.ramp_fraction <= 1.0) {
            return Err(Error::param(format!("ramp fraction {} outside (0, 1]", self.ramp_fraction)));
        }
        if self.total_steps == 0 {
            return Err(Error::param("schedule needs at least one step"));
        }
        if self.shape == RampShape::Steps(0) {
            return Err(Error::param("a stepped ramp needs at least one increment"));
        }
        Ok(())
    }

    pub fn beta_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::param(format!("step {step} beyond schedule of {} steps", self.total_steps)));
        }
        let ramp = self.ramp_fraction * self.total_steps as f64;
        let t = step as f64 / ramp;
        if t >= 1.0 {
            return Ok(self.beta_end);
        }
        let frac = match self.shape {
            RampShape::Linear => t,
            RampShape::Cosine => 0.5 * (1.0 - (std::f64::consts::PI * t).cos()),
            RampShape::Steps(n) => (t * n as f64).floor() / n as f64,
        };
        Ok(self.beta_start + (self.beta_end - self.beta_start) * frac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_defaults() {
        let s = BetaSchedule::annealed(1000).unwrap();
        assert_eq!(s.beta_at(0).unwrap(), 0.5);
        assert_eq!(s.beta_at(1000).unwrap(), 4.0);
        assert_eq!(s.beta_at(250).unwrap(), 2.25);
        assert_eq!(s.beta_at(500).unwrap(), 4.0);
        assert!(s.beta_at(1001).is_err());
    }

    #[test]
    fn every_shape_is_monotone_with_exact_endpoints() {
        for shape in [RampShape::Linear, RampShape::Cosine, RampShape::Steps(4)] {
            for total in [1u64, 7, 333] {
                let s = BetaSchedule::annealed(total).unwrap().with_shape(shape).unwrap();
                let mut prev = s.beta_at(0).unwrap();
                assert_eq!(prev, 0.5);
                for step in 1..=total {
                    let b = s.beta_at(step).unwrap();
                    assert!(b >= prev, "{shape:?} {step}");
                    prev = b;
                }
                assert_eq!(prev, 4.0);
            }
        }
    }

    #[test]
    fn invalid_schedules() {
        assert!(BetaSchedule::new(4.0, 0.5, 0.5, 10).is_err());
        assert!(BetaSchedule::new(0.5, 4.0, 0.0, 10).is_err());
        assert!(BetaSchedule::new(0.5, 4.0, 1.5, 10).is_err());
        assert!(BetaSchedule::new(0.5, 4.0, 0.5, 0).is_err());
        assert!(BetaSchedule::annealed(5).unwrap().with_shape(RampShape::Steps(0)).is_err());
    }
}
