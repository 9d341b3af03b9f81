//! Round-based federated solvers.
//!
//! A round samples devices, lets each of them compute on its own training
//! split (in parallel), then reduces the device messages on the server in
//! ascending device-id order so the result does not depend on scheduling.

mod rounds;
mod run;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, FederatedDataset, Split};
use crate::error::{Error, Result};
use crate::objective::DEFAULT_EPS_FLOOR;

pub use rounds::{
    afl_round, fedavg_round, local_sgd, project_to_simplex, qfedavg_round, qfedsgd_round,
    sample_devices, DeviceUpdate, LocalSgd,
};
pub use run::{
    per_device_accuracy, per_device_train_loss, run, DatasetSummary, RoundRecord, RunResult, Trainer,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", try_from = "String")]
pub enum Algorithm {
    Fedavg,
    Qfedsgd,
    Qfedavg,
    Afl,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fedavg => "fedavg",
            Algorithm::Qfedsgd => "qfedsgd",
            Algorithm::Qfedavg => "qfedavg",
            Algorithm::Afl => "afl",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(Algorithm::Fedavg),
            "qfedsgd" | "q-fedsgd" => Ok(Algorithm::Qfedsgd),
            "qfedavg" | "q-fedavg" => Ok(Algorithm::Qfedavg),
            "afl" => Ok(Algorithm::Afl),
            _ => Err(Error::InvalidConfig(format!(
                "unknown algorithm '{s}' (expected fedavg, qfedsgd, qfedavg or afl)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", try_from = "String")]
pub enum SamplingMode {
    /// device k drawn with probability proportional to its training size
    Weighted,
    Uniform,
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(SamplingMode::Weighted),
            "uniform" => Ok(SamplingMode::Uniform),
            other => Err(Error::InvalidConfig(format!(
                "unknown sampling mode '{other}' (expected weighted or uniform)"
            ))),
        }
    }
}

impl TryFrom<String> for Algorithm {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl TryFrom<String> for SamplingMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub q: f64,
    /// Lipschitz constant at q = 0 (inverse step-size of the q-solvers).
    pub lipschitz: f64,
    /// Local SGD step-size.
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub devices_per_round: usize,
    pub max_rounds: usize,
    pub sampling: SamplingMode,
    pub seed: u64,
    /// Rounds without a new objective minimum before stopping; 0 disables early stopping.
    pub patience: usize,
    pub scale_delta_by_l: bool,
    pub afl_gamma_w: f64,
    pub afl_gamma_lambda: f64,
    pub eps_floor: f64,
    /// Ridge coefficient on SVM weights (ignored by softmax).
    pub svm_ridge: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Qfedavg,
            q: 0.0,
            lipschitz: 10.0,
            eta: 0.1,
            epochs: 1,
            batch_size: 10,
            devices_per_round: 10,
            max_rounds: 200,
            sampling: SamplingMode::Weighted,
            seed: 0,
            patience: 10,
            scale_delta_by_l: false,
            afl_gamma_w: 0.1,
            afl_gamma_lambda: 0.1,
            eps_floor: DEFAULT_EPS_FLOOR,
            svm_ridge: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("solver.{name} must be finite and > 0, got {v}")))
            }
        };
        if !(self.q >= 0.0) || !self.q.is_finite() {
            return bad(format!("solver.q must be finite and >= 0, got {}", self.q));
        }
        positive("lipschitz", self.lipschitz)?;
        // eta = 0 is a legal no-op step (useful for fixed points)
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad(format!("solver.eta must be finite and >= 0, got {}", self.eta));
        }
        if self.epochs == 0 {
            return bad("solver.epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("solver.batch_size must be >= 1".into());
        }
        if self.devices_per_round == 0 {
            return bad("solver.devices_per_round must be >= 1".into());
        }
        positive("eps_floor", self.eps_floor)?;
        if self.algorithm == Algorithm::Afl {
            positive("afl_gamma_w", self.afl_gamma_w)?;
            if !(self.afl_gamma_lambda >= 0.0) || !self.afl_gamma_lambda.is_finite() {
                return bad(format!(
                    "solver.afl_gamma_lambda must be finite and >= 0, got {}",
                    self.afl_gamma_lambda
                ));
            }
        }
        if !(self.svm_ridge >= 0.0) {
            return bad(format!("solver.svm_ridge must be >= 0, got {}", self.svm_ridge));
        }
        Ok(())
    }

    pub fn local_sgd(&self) -> LocalSgd {
        LocalSgd {
            epochs: self.epochs,
            eta: self.eta,
            batch_size: self.batch_size,
        }
    }
}

/// One device's data, materialised per split.
#[derive(Debug, Clone)]
pub struct DeviceData {
    pub device_id: usize,
    pub train: Batch,
    pub val: Batch,
    pub test: Batch,
}

impl DeviceData {
    pub fn from_dataset(dataset: &FederatedDataset) -> Vec<DeviceData> {
        dataset
            .shards
            .iter()
            .map(|s| DeviceData {
                device_id: s.device_id,
                train: s.batch(Split::Train),
                val: s.batch(Split::Val),
                test: s.batch(Split::Test),
            })
            .collect()
    }

    pub fn split(&self, split: Split) -> &Batch {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}
