//! Grid search for the q = 0 Lipschitz constant.
//!
//! q-FedSGD at q = 0 is federated gradient descent with step `1/L`, so each
//! candidate step-size `eta` is probed by running it with `L = 1/eta`. The
//! winner is reused for every q of a sweep.

use serde::{Deserialize, Serialize};

use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::solvers::{Algorithm, SolverConfig, Trainer};

pub const DEFAULT_ETA_GRID: [f64; 7] = [1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001];
pub const DEFAULT_PROBE_ROUNDS: usize = 30;
/// A probe diverges once its objective exceeds this multiple of the initial value.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LProbe {
    pub eta_grid: Vec<f64>,
    pub probe_rounds: usize,
}

impl Default for LProbe {
    fn default() -> Self {
        Self {
            eta_grid: DEFAULT_ETA_GRID.to_vec(),
            probe_rounds: DEFAULT_PROBE_ROUNDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub eta: f64,
    /// `None` when the probe diverged.
    pub final_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LEstimate {
    pub lipschitz: f64,
    pub eta: f64,
    pub probes: Vec<ProbeOutcome>,
}

/// Picks the step-size whose trajectory ends lowest among non-divergent ones.
///
/// `trajectory(eta)` returns the objective at the start followed by the
/// objective after each probe round; an `Err` counts as divergence. Ties
/// keep the earlier grid entry.
pub fn select_step_size(
    eta_grid: &[f64],
    mut trajectory: impl FnMut(f64) -> Result<Vec<f64>>,
) -> Result<LEstimate> {
    if eta_grid.is_empty() || eta_grid.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::InvalidConfig("eta_grid must be non-empty with finite positive entries".into()));
    }
    let mut probes = Vec::with_capacity(eta_grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &eta in eta_grid {
        let final_objective = match trajectory(eta) {
            Ok(values) if !values.is_empty() => {
                let initial = values[0];
                let diverged = values
                    .iter()
                    .any(|v| !v.is_finite() || *v > DIVERGENCE_FACTOR * initial);
                (!diverged).then(|| *values.last().unwrap())
            }
            Ok(_) => None,
            Err(e) => {
                log::debug!("step-size probe eta={eta} failed: {e}");
                None
            }
        };
        if let Some(v) = final_objective {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((eta, v));
            }
        }
        probes.push(ProbeOutcome { eta, final_objective });
    }
    match best {
        Some((eta, _)) => Ok(LEstimate {
            lipschitz: 1.0 / eta,
            eta,
            probes,
        }),
        None => Err(Error::AllCandidatesDiverged(format!("grid {eta_grid:?}"))),
    }
}

/// Estimates L on `dataset` (already split) by probing q-FedSGD at q = 0.
/// Sampling uses `base.seed`, so every candidate sees the same devices.
pub fn estimate_lipschitz(dataset: &FederatedDataset, base: &SolverConfig, probe: &LProbe) -> Result<LEstimate> {
    select_step_size(&probe.eta_grid, |eta| {
        let config = SolverConfig {
            algorithm: Algorithm::Qfedsgd,
            q: 0.0,
            lipschitz: 1.0 / eta,
            max_rounds: probe.probe_rounds,
            patience: 0,
            ..base.clone()
        };
        let mut trainer = Trainer::new(&config, dataset)?;
        let mut values = vec![trainer.objective()?];
        for _ in 0..probe.probe_rounds {
            values.push(trainer.step()?.objective);
        }
        Ok(values)
    })
}
