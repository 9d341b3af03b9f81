use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rounds::{afl_round, fedavg_round, qfedavg_round, qfedsgd_round, sample_devices};
use super::{Algorithm, DeviceData, SamplingMode, SolverConfig};
use crate::data::{sampling_weights, FederatedDataset, Split, Task};
use crate::error::{Error, Result};
use crate::metrics::AccuracyDistribution;
use crate::models::{ModelSpec, ParamVector};
use crate::objective::qffl_value;
use crate::rngdet::SeededStream;

/// Shape of the dataset a run was trained on, echoed for report consistency checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub task: Task,
    pub num_devices: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub total_samples: usize,
}

impl DatasetSummary {
    pub fn of(dataset: &FederatedDataset) -> Self {
        Self {
            task: dataset.task,
            num_devices: dataset.num_devices(),
            feature_dim: dataset.feature_dim,
            num_classes: dataset.num_classes,
            total_samples: dataset.total_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: SolverConfig,
    pub dataset: DatasetSummary,
    pub rounds_executed: usize,
    /// Objective at the initial (all-zero) model.
    pub initial_objective: f64,
    /// Training objective `F_q` after each executed round.
    pub objective_history: Vec<f64>,
    pub device_ids: Vec<usize>,
    pub train_counts: Vec<usize>,
    pub val_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    /// `None` where the device's split is empty.
    pub per_device_train_acc: Vec<Option<f64>>,
    pub per_device_val_acc: Vec<Option<f64>>,
    pub per_device_test_acc: Vec<Option<f64>>,
    pub excluded_test_devices: Vec<usize>,
    pub final_train_losses: Vec<f64>,
    pub final_params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub afl_lambda: Option<Vec<f64>>,
}

impl RunResult {
    pub fn accuracy_distribution(&self, split: Split) -> Result<AccuracyDistribution> {
        let (accs, counts) = match split {
            Split::Train => (&self.per_device_train_acc, &self.train_counts),
            Split::Val => (&self.per_device_val_acc, &self.val_counts),
            Split::Test => (&self.per_device_test_acc, &self.test_counts),
        };
        AccuracyDistribution::from_optional(&self.device_ids, accs, counts)
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_history
            .last()
            .copied()
            .unwrap_or(self.initial_objective)
    }
}

/// What happened in one round, for callers that drive a [`Trainer`] by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Selected device ids in ascending order.
    pub selected: Vec<usize>,
    pub params: ParamVector,
    pub objective: f64,
    pub lambda: Option<Vec<f64>>,
}

/// Per-device accuracy on one split; `None` for empty splits.
pub fn per_device_accuracy(
    spec: &ModelSpec,
    devices: &[DeviceData],
    params: &ParamVector,
    split: Split,
) -> Result<Vec<Option<f64>>> {
    devices
        .par_iter()
        .map(|d| {
            let batch = d.split(split);
            if batch.is_empty() {
                Ok(None)
            } else {
                spec.batch_accuracy(params, batch).map(Some)
            }
        })
        .collect()
}

pub fn per_device_train_loss(spec: &ModelSpec, devices: &[DeviceData], params: &ParamVector) -> Result<Vec<f64>> {
    devices
        .par_iter()
        .map(|d| spec.batch_loss(params, &d.train))
        .collect()
}

/// Step-by-step driver of one federated training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: SolverConfig,
    spec: ModelSpec,
    dataset: DatasetSummary,
    devices: Vec<DeviceData>,
    sample_weights: Vec<f64>,
    objective_weights: Vec<f64>,
    params: ParamVector,
    lambda: Option<Vec<f64>>,
    round: usize,
}

impl Trainer {
    pub fn new(config: &SolverConfig, dataset: &FederatedDataset) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let m = dataset.num_devices();
        if config.algorithm != Algorithm::Afl && config.devices_per_round > m {
            return Err(Error::InvalidConfig(format!(
                "solver.devices_per_round = {} exceeds the {m} devices in the dataset",
                config.devices_per_round
            )));
        }
        if let Some(shard) = dataset.shards.iter().find(|s| s.train_idx.is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "device {} has an empty training split",
                shard.device_id
            )));
        }
        let spec = ModelSpec::for_dataset(dataset, config.svm_ridge)?;
        let weights = match config.sampling {
            SamplingMode::Weighted => sampling_weights(dataset)?,
            SamplingMode::Uniform => vec![1.0 / m as f64; m],
        };
        let lambda = (config.algorithm == Algorithm::Afl).then(|| vec![1.0 / m as f64; m]);
        Ok(Self {
            config: config.clone(),
            spec,
            dataset: DatasetSummary::of(dataset),
            devices: DeviceData::from_dataset(dataset),
            sample_weights: weights.clone(),
            objective_weights: weights,
            params: spec.zeros(),
            lambda,
            round: 0,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn devices(&self) -> &[DeviceData] {
        &self.devices
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn lambda(&self) -> Option<&[f64]> {
        self.lambda.as_deref()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Weights `p_k` of the training objective (they match the sampling law).
    pub fn objective_weights(&self) -> &[f64] {
        &self.objective_weights
    }

    pub fn train_losses(&self) -> Result<Vec<f64>> {
        per_device_train_loss(&self.spec, &self.devices, &self.params)
    }

    pub fn objective(&self) -> Result<f64> {
        qffl_value(self.config.q, &self.objective_weights, &self.train_losses()?)
    }

    /// Device positions selected for the upcoming round.
    pub fn select(&self) -> Result<Vec<usize>> {
        if self.config.algorithm == Algorithm::Afl {
            return Ok((0..self.devices.len()).collect());
        }
        let mut stream = SeededStream::new(self.config.seed, format!("sample:round:{}", self.round));
        sample_devices(&self.sample_weights, self.config.devices_per_round, &mut stream)
    }

    pub fn step(&mut self) -> Result<RoundRecord> {
        let selected = self.select()?;
        let cfg = &self.config;
        let sgd = cfg.local_sgd();
        let next = match cfg.algorithm {
            Algorithm::Fedavg => fedavg_round(
                &self.spec,
                &self.devices,
                &self.params,
                &selected,
                &sgd,
                cfg.seed,
                self.round,
            )?,
            Algorithm::Qfedsgd => qfedsgd_round(
                &self.spec,
                &self.devices,
                &self.params,
                &selected,
                cfg.q,
                cfg.lipschitz,
                cfg.eps_floor,
            )?,
            Algorithm::Qfedavg => qfedavg_round(
                &self.spec,
                &self.devices,
                &self.params,
                &selected,
                cfg.q,
                cfg.lipschitz,
                cfg.eps_floor,
                cfg.scale_delta_by_l,
                &sgd,
                cfg.seed,
                self.round,
            )?,
            Algorithm::Afl => {
                let lambda = self.lambda.as_ref().expect("AFL keeps a mixture");
                let (next, lambda, _) = afl_round(
                    &self.spec,
                    &self.devices,
                    &self.params,
                    lambda,
                    cfg.afl_gamma_w,
                    cfg.afl_gamma_lambda,
                )?;
                self.lambda = Some(lambda);
                next
            }
        };
        self.params = next;
        let round = self.round;
        self.round += 1;
        let objective = self.objective()?;
        let mut ids: Vec<usize> = selected.iter().map(|&i| self.devices[i].device_id).collect();
        ids.sort_unstable();
        Ok(RoundRecord {
            round,
            selected: ids,
            params: self.params.clone(),
            objective,
            lambda: self.lambda.clone(),
        })
    }

    /// Runs up to `max_rounds`, stopping once `patience` consecutive rounds
    /// fail to set a new objective minimum.
    pub fn train(mut self) -> Result<RunResult> {
        let initial_objective = self.objective()?;
        let mut history = Vec::new();
        let mut best = f64::INFINITY;
        let mut stale = 0;
        while self.round < self.config.max_rounds {
            let record = self.step()?;
            log::info!(
                "{} q={} round {} objective {:.6}",
                self.config.algorithm,
                self.config.q,
                record.round,
                record.objective
            );
            history.push(record.objective);
            if record.objective < best {
                best = record.objective;
                stale = 0;
            } else {
                stale += 1;
            }
            if self.config.patience > 0 && stale >= self.config.patience {
                log::debug!("stopping after {} rounds without improvement", stale);
                break;
            }
        }
        self.finish(initial_objective, history)
    }

    fn finish(self, initial_objective: f64, objective_history: Vec<f64>) -> Result<RunResult> {
        let acc = |split| per_device_accuracy(&self.spec, &self.devices, &self.params, split);
        let per_device_test_acc = acc(Split::Test)?;
        let excluded_test_devices = self
            .devices
            .iter()
            .zip(&per_device_test_acc)
            .filter(|(_, a)| a.is_none())
            .map(|(d, _)| d.device_id)
            .collect();
        let counts = |split| self.devices.iter().map(|d| d.split(split).len()).collect::<Vec<_>>();
        Ok(RunResult {
            rounds_executed: objective_history.len(),
            initial_objective,
            objective_history,
            device_ids: self.devices.iter().map(|d| d.device_id).collect(),
            train_counts: counts(Split::Train),
            val_counts: counts(Split::Val),
            test_counts: counts(Split::Test),
            per_device_train_acc: acc(Split::Train)?,
            per_device_val_acc: acc(Split::Val)?,
            per_device_test_acc,
            excluded_test_devices,
            final_train_losses: self.train_losses()?,
            final_params: self.params.to_vec(),
            afl_lambda: self.lambda,
            config: self.config,
            dataset: self.dataset,
        })
    }
}

/// Trains from the zero model with the configured algorithm.
pub fn run(config: &SolverConfig, dataset: &FederatedDataset) -> Result<RunResult> {
    Trainer::new(config, dataset)?.train()
}

impl RunResult {
    pub fn params(&self) -> ParamVector {
        Array1::from(self.final_params.clone())
    }
}
