use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the physics-informed training loss
/// `mse · MSE(y, ŷ) + α Σ u_i² [u_i < 0] + β ‖ε‖₂`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Multiplier on the output MSE; 1 in normal use.
    #[serde(default = "one")]
    pub mse: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Bound on the loss-model gap; carried as metadata, not used in the loss.
    pub zeta: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mse: 1.0,
            alpha: 1.0,
            beta: 1e-3,
            zeta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.mse) && ok(self.alpha) && ok(self.beta)) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if !(self.zeta.is_finite() && self.zeta > 0.0) {
            return Err(Error::Config("zeta must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted contributions of each term; `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub mse: f64,
    pub penalty: f64,
    pub reg: f64,
}

impl LossBreakdown {
    pub(crate) fn add(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.mse += other.mse;
        self.penalty += other.penalty;
        self.reg += other.reg;
    }

    pub(crate) fn scaled(self, f: f64) -> Self {
        Self {
            total: self.total * f,
            mse: self.mse * f,
            penalty: self.penalty * f,
            reg: self.reg * f,
        }
    }

    /// Names the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        if !self.mse.is_finite() {
            Some("mse")
        } else if !self.penalty.is_finite() {
            Some("penalty")
        } else if !self.reg.is_finite() {
            Some("reg")
        } else if !self.total.is_finite() {
            Some("total")
        } else {
            None
        }
    }

    pub(crate) fn ensure_finite(&self, context: &str) -> Result<()> {
        match self.non_finite_term() {
            None => Ok(()),
            Some(term) => Err(Error::Divergence(format!(
                "{context}: {term} term exploded; components {}",
                serde_json::to_string(self).unwrap_or_default()
            ))),
        }
    }
}

/// One-sided penalty on negative losses.
#[inline]
pub(crate) fn negativity_penalty(u: &[f64]) -> f64 {
    u.iter().filter(|v| **v < 0.0).map(|v| v * v).sum()
}

#[inline]
pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-step loss on normalized quantities.
pub fn physics_loss(
    y_target: &[f64],
    y_pred: &[f64],
    u_corrected: &[f64],
    correction: &[f64],
    weights: &LossWeights,
) -> LossBreakdown {
    debug_assert_eq!(y_target.len(), y_pred.len());
    let p = y_target.len().max(1) as f64;
    let mse = y_target
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / p;
    let mse = weights.mse * mse;
    let penalty = weights.alpha * negativity_penalty(u_corrected);
    let reg = weights.beta * l2(correction);
    LossBreakdown {
        total: mse + penalty + reg,
        mse,
        penalty,
        reg,
    }
}
