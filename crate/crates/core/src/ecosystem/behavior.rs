use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigmoid;

/// Ground-truth creation response of one user.
///
/// Per-tick creation probability given `a` feedback received over the
/// trailing memory window is `sigmoid(base + gain * (1 - exp(-rho * a)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBehavior {
    pub base: f64,
    pub gain: f64,
    pub rho: f64,
}

impl GroundTruthBehavior {
    /// Validates the parameters. Besides `gain >= 0` and `rho > 0` the
    /// increments `p(a + 1) - p(a)` must be nonincreasing over the feedback
    /// counts; the sigmoid is convex below zero and can outweigh a slow
    /// saturation.
    pub fn new(base: f64, gain: f64, rho: f64) -> Result<Self> {
        let b = Self { base, gain, rho };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.base.is_finite() || !self.gain.is_finite() || !self.rho.is_finite() {
            return Err(Error::config("behavior parameters must be finite"));
        }
        if self.gain < 0.0 {
            return Err(Error::config(format!("gain must be >= 0, got {}", self.gain)));
        }
        if self.rho <= 0.0 {
            return Err(Error::config(format!("rho must be > 0, got {}", self.rho)));
        }
        if !concave(self.base, self.gain, self.rho) {
            return Err(Error::config(format!(
                "gain {} too large for base {} and rho {}: response would not be concave",
                self.gain, self.base, self.rho
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn create_prob(&self, feedback: f64) -> f64 {
        sigmoid(self.base + self.gain * (1.0 - (-self.rho * feedback).exp()))
    }
}

/// Checks nonincreasing increments on every count until the remaining
/// lift is negligible.
pub(crate) fn concave(base: f64, gain: f64, rho: f64) -> bool {
    let b = GroundTruthBehavior { base, gain, rho };
    let mut prev = b.create_prob(0.0);
    let mut prev_inc = f64::INFINITY;
    let mut a = 1.0;
    while gain * (-rho * (a - 1.0)).exp() > 1e-12 && a <= 1e6 {
        let p = b.create_prob(a);
        let inc = p - prev;
        if inc > prev_inc + 1e-15 {
            return false;
        }
        prev_inc = inc;
        prev = p;
        a += 1.0;
    }
    true
}

/// Closed-form ground-truth creation probability. Defined for any
/// parameters; concavity is only guaranteed for validated behaviours.
pub fn true_create_prob(behavior: &GroundTruthBehavior, feedback_count: u32) -> f64 {
    behavior.create_prob(f64::from(feedback_count))
}

/// Lift in per-tick creation probability from the first unit of feedback.
pub fn true_first_unit_lift(behavior: &GroundTruthBehavior) -> f64 {
    behavior.create_prob(1.0) - behavior.create_prob(0.0)
}
