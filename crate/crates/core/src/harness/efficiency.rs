//! Rounds-versus-objective curves for comparing solvers on one objective.

use serde::{Deserialize, Serialize};

use crate::data::FederatedDataset;
use crate::error::Result;
use crate::solvers::{Algorithm, SolverConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCurve {
    pub dataset: String,
    pub algorithm: Algorithm,
    pub q: f64,
    /// Objective at the initial model followed by one entry per round.
    pub objectives: Vec<f64>,
}

impl EfficiencyCurve {
    /// First round whose objective is at or below `target`.
    pub fn rounds_to_target(&self, target: f64) -> Option<usize> {
        self.objectives.iter().position(|&v| v <= target)
    }
}

/// Runs each algorithm for exactly `rounds` rounds (no early stopping) with
/// the same q, L, seed and sampling, recording the training objective.
pub fn solver_curves(
    label: &str,
    dataset: &FederatedDataset,
    base: &SolverConfig,
    algorithms: &[Algorithm],
    rounds: usize,
) -> Result<Vec<EfficiencyCurve>> {
    algorithms
        .iter()
        .map(|&algorithm| {
            let config = SolverConfig {
                algorithm,
                max_rounds: rounds,
                patience: 0,
                ..base.clone()
            };
            let mut trainer = Trainer::new(&config, dataset)?;
            let mut objectives = Vec::with_capacity(rounds + 1);
            objectives.push(trainer.objective()?);
            for _ in 0..rounds {
                objectives.push(trainer.step()?.objective);
            }
            Ok(EfficiencyCurve {
                dataset: label.to_string(),
                algorithm,
                q: base.q,
                objectives,
            })
        })
        .collect()
}

/// `dataset,algorithm,q,round,objective` rows; round 0 is the initial model.
pub fn curves_csv(curves: &[EfficiencyCurve]) -> String {
    let mut out = String::from("dataset,algorithm,q,round,objective\n");
    for c in curves {
        for (round, v) in c.objectives.iter().enumerate() {
            out.push_str(&format!("{},{},{},{round},{v}\n", c.dataset, c.algorithm, c.q));
        }
    }
    out
}
