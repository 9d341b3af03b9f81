//! TOML experiment configuration.
//!
//! Three optional tables: `[synthetic]`, `[solver]` and `[sweep]`. Missing
//! keys take the library defaults and unknown keys are rejected.

use std::path::Path;

use qffl::data::SyntheticSpec;
use qffl::harness::{LProbe, SweepSpec, DEFAULT_Q_GRID, DEFAULT_SEEDS};
use qffl::solvers::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticSpec,
    pub solver: SolverConfig,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub q_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub accuracy_drop_tolerance: f64,
    pub device_specific: bool,
    pub estimate_lipschitz: Option<LProbe>,
    pub histogram_bins: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        let spec = SweepSpec::default();
        Self {
            q_grid: DEFAULT_Q_GRID.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            accuracy_drop_tolerance: spec.accuracy_drop_tolerance,
            device_specific: spec.device_specific,
            estimate_lipschitz: None,
            histogram_bins: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            base: self.solver.clone(),
            q_grid: self.sweep.q_grid.clone(),
            seeds: self.sweep.seeds.clone(),
            accuracy_drop_tolerance: self.sweep.accuracy_drop_tolerance,
            estimate_lipschitz: self.sweep.estimate_lipschitz.clone(),
            device_specific: self.sweep.device_specific,
        }
    }

    /// Checks every section, so bad keys fail before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.synthetic.validate()?;
        self.sweep_spec().validate()?;
        if self.sweep.histogram_bins == 0 {
            return Err(CliError::Usage("sweep.histogram_bins must be >= 1".into()));
        }
        Ok(())
    }

    /// `--seed` override. A sweep keeps its seed count and shifts it to start at `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.synthetic.seed = seed;
        self.solver.seed = seed;
        let n = self.sweep.seeds.len() as u64;
        self.sweep.seeds = (0..n).map(|i| seed.wrapping_add(i)).collect();
    }
}
