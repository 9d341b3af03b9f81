//! The q-FFL objective, the local Lipschitz estimate that sets the dynamic
//! step-size of the q-solvers, and the alpha-fairness utility.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QConfig {
    pub q: f64,
    /// Lipschitz constant of the gradient at q = 0, i.e. the inverse step-size.
    pub lipschitz: f64,
    pub eps_floor: f64,
}

impl QConfig {
    pub fn new(q: f64, lipschitz: f64) -> Result<Self> {
        let cfg = Self {
            q,
            lipschitz,
            eps_floor: DEFAULT_EPS_FLOOR,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q >= 0.0) || !self.q.is_finite() {
            return Err(Error::InvalidConfig(format!("q must be finite and >= 0, got {}", self.q)));
        }
        if !(self.lipschitz > 0.0) || !self.lipschitz.is_finite() {
            return Err(Error::InvalidConfig(format!("L must be finite and > 0, got {}", self.lipschitz)));
        }
        if !(self.eps_floor > 0.0) {
            return Err(Error::InvalidConfig(format!("eps_floor must be > 0, got {}", self.eps_floor)));
        }
        Ok(())
    }
}

/// `F^{q+1}`, returning `F` itself when `q = 0` so the q = 0 objective is
/// the plain weighted mean bit for bit.
fn pow_q_plus_one(f: f64, q: f64) -> f64 {
    if q == 0.0 {
        f
    } else {
        f.powf(q + 1.0)
    }
}

/// `sum_k p_k / (q + 1) * F_k^{q+1}`, summed in index order.
pub fn qffl_value(q: f64, p: &[f64], losses: &[f64]) -> Result<f64> {
    if p.len() != losses.len() {
        return Err(Error::Shape(format!(
            "{} weights but {} losses",
            p.len(),
            losses.len()
        )));
    }
    if !(q >= 0.0) {
        return Err(Error::InvalidArgument(format!("q must be >= 0, got {q}")));
    }
    let mut total = 0.0;
    for (k, (&pk, &fk)) in p.iter().zip(losses).enumerate() {
        if fk < 0.0 || fk.is_nan() {
            return Err(Error::NegativeLoss { index: k, value: fk });
        }
        total += pk / (q + 1.0) * pow_q_plus_one(fk, q);
    }
    Ok(total)
}

/// Floors a loss before it is raised to a power that may be negative.
pub fn floor_loss(f: f64, q: f64, eps_floor: f64) -> f64 {
    if q > 0.0 {
        f.max(eps_floor)
    } else {
        f
    }
}

/// `L f^q + q f^{q-1} ||grad f||^2`, an upper bound on the local Lipschitz
/// constant of the gradient of `f^{q+1} / (q + 1)`.
///
/// For `q > 0`, `f` is floored at `eps_floor` first. For `q = 0` this is
/// exactly `L`.
pub fn lipschitz_estimate(lipschitz: f64, q: f64, f_value: f64, grad_norm_sq: f64, eps_floor: f64) -> f64 {
    if q == 0.0 {
        return lipschitz;
    }
    let f = floor_loss(f_value, q, eps_floor);
    lipschitz * f.powf(q) + q * f.powf(q - 1.0) * grad_norm_sq
}

pub fn alpha_fairness_utility(alpha: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::InvalidArgument(format!("utility needs x > 0, got {x}")));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(if alpha == 1.0 {
        x.ln()
    } else {
        x.powf(1.0 - alpha) / (1.0 - alpha)
    })
}
