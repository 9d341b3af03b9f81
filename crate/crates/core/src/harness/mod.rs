//! Multi-seed, multi-q experiment orchestration.
//!
//! A sweep trains one model per `(q, seed)` pair. The seed drives the
//! train/val/test shuffle as well as device sampling and SGD orders. L is
//! fixed once per dataset (given, or probed at q = 0) and shared by every q.

mod efficiency;
mod lipschitz;
mod selection;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, FederatedDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_over_seeds, distribution_stats, AggregatedStats, DistributionStats};
use crate::models::ModelSpec;
use crate::solvers::{run, DatasetSummary, DeviceData, RunResult, SolverConfig};

pub use efficiency::{curves_csv, solver_curves, EfficiencyCurve};
pub use lipschitz::{
    estimate_lipschitz, select_step_size, LEstimate, LProbe, ProbeOutcome, DEFAULT_ETA_GRID,
    DEFAULT_PROBE_ROUNDS, DIVERGENCE_FACTOR,
};
pub use selection::{device_specific_selection, DeviceSpecificResult};

pub const DEFAULT_Q_GRID: [f64; 9] = [0.0, 0.001, 0.01, 0.1, 1.0, 2.0, 5.0, 10.0, 15.0];
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub base: SolverConfig,
    pub q_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Allowed drop (percentage points) of the data-weighted validation mean relative to q = 0.
    pub accuracy_drop_tolerance: f64,
    /// Probe L at q = 0 before sweeping instead of using `base.lipschitz`.
    pub estimate_lipschitz: Option<LProbe>,
    pub device_specific: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            base: SolverConfig::default(),
            q_grid: DEFAULT_Q_GRID.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            accuracy_drop_tolerance: 1.0,
            estimate_lipschitz: None,
            device_specific: true,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.q_grid.is_empty() || !self.q_grid.contains(&0.0) {
            return Err(Error::InvalidConfig("sweep.q_grid must be non-empty and contain 0".into()));
        }
        if self.q_grid.iter().any(|q| !(*q >= 0.0) || !q.is_finite()) {
            return Err(Error::InvalidConfig("sweep.q_grid entries must be finite and >= 0".into()));
        }
        let mut sorted = self.q_grid.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("sweep.q_grid has duplicate entries".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("sweep.seeds must be non-empty".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("sweep.seeds has duplicate entries".into()));
        }
        if !(self.accuracy_drop_tolerance >= 0.0) {
            return Err(Error::InvalidConfig("sweep.accuracy_drop_tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// One `(q, seed)` run, without its model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub q: f64,
    pub seed: u64,
    pub rounds_executed: usize,
    pub final_objective: f64,
    pub train_stats: DistributionStats,
    pub val_stats: DistributionStats,
    pub test_stats: DistributionStats,
    pub device_ids: Vec<usize>,
    pub val_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub per_device_val_acc: Vec<Option<f64>>,
    pub per_device_test_acc: Vec<Option<f64>>,
}

impl RunSummary {
    pub fn from_run(q: f64, seed: u64, result: &RunResult) -> Result<Self> {
        Ok(Self {
            q,
            seed,
            rounds_executed: result.rounds_executed,
            final_objective: result.final_objective(),
            train_stats: distribution_stats(&result.accuracy_distribution(Split::Train)?)?,
            val_stats: distribution_stats(&result.accuracy_distribution(Split::Val)?)?,
            test_stats: distribution_stats(&result.accuracy_distribution(Split::Test)?)?,
            device_ids: result.device_ids.clone(),
            val_counts: result.val_counts.clone(),
            test_counts: result.test_counts.clone(),
            per_device_val_acc: result.per_device_val_acc.clone(),
            per_device_test_acc: result.per_device_test_acc.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSummary {
    pub q: f64,
    pub train: AggregatedStats,
    pub val: AggregatedStats,
    pub test: AggregatedStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSelection {
    pub seed: u64,
    pub result: DeviceSpecificResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpecificReport {
    pub per_seed: Vec<SeedSelection>,
    pub test: AggregatedStats,
    pub val: AggregatedStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub spec: SweepSpec,
    pub dataset: DatasetSummary,
    pub lipschitz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_probe: Option<LEstimate>,
    /// Sorted by `(q, seed)`.
    pub runs: Vec<RunSummary>,
    /// Sorted by q.
    pub per_q: Vec<QSummary>,
    pub selected_q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_specific: Option<DeviceSpecificReport>,
}

impl SweepReport {
    pub fn q_summary(&self, q: f64) -> Option<&QSummary> {
        self.per_q.iter().find(|s| s.q == q)
    }

    pub fn runs_for(&self, q: f64) -> impl Iterator<Item = &RunSummary> {
        self.runs.iter().filter(move |r| r.q == q)
    }
}

/// Chooses the q with the lowest mean validation variance among those whose
/// mean data-weighted validation accuracy stays within `tolerance`
/// percentage points of q = 0. Ties go to the smaller q.
pub fn select_q(per_q: &[QSummary], tolerance: f64) -> Result<f64> {
    let baseline = per_q
        .iter()
        .find(|s| s.q == 0.0)
        .ok_or_else(|| Error::InvalidArgument("q = 0 missing from sweep results".into()))?
        .val
        .mean_data_weighted
        .mean;
    let mut ordered: Vec<&QSummary> = per_q.iter().collect();
    ordered.sort_by(|a, b| a.q.total_cmp(&b.q));
    let mut best: Option<&QSummary> = None;
    for s in ordered {
        if s.val.mean_data_weighted.mean < baseline - tolerance {
            continue;
        }
        if best.is_none_or(|b| s.val.variance.mean < b.val.variance.mean) {
            best = Some(s);
        }
    }
    Ok(best.expect("q = 0 always qualifies").q)
}

/// Runs every `(q, seed)` pair of `spec` on `dataset`.
pub fn sweep(spec: &SweepSpec, dataset: &FederatedDataset) -> Result<SweepReport> {
    spec.validate()?;
    dataset.validate()?;

    let mut seeds = spec.seeds.clone();
    seeds.sort_unstable();
    let splits: Vec<FederatedDataset> = seeds
        .iter()
        .map(|&seed| split_dataset(dataset, seed))
        .collect::<Result<_>>()?;

    let (lipschitz, lipschitz_probe) = match &spec.estimate_lipschitz {
        Some(probe) => {
            let base = SolverConfig { seed: seeds[0], ..spec.base.clone() };
            let est = estimate_lipschitz(&splits[0], &base, probe)?;
            log::info!("estimated L = {} (eta = {})", est.lipschitz, est.eta);
            (est.lipschitz, Some(est))
        }
        None => (spec.base.lipschitz, None),
    };

    let mut q_grid = spec.q_grid.clone();
    q_grid.sort_by(f64::total_cmp);
    let pairs: Vec<(usize, usize)> = (0..q_grid.len())
        .flat_map(|qi| (0..seeds.len()).map(move |si| (qi, si)))
        .collect();
    let results: Vec<RunResult> = pairs
        .par_iter()
        .map(|&(qi, si)| {
            let config = SolverConfig {
                q: q_grid[qi],
                seed: seeds[si],
                lipschitz,
                ..spec.base.clone()
            };
            let result = run(&config, &splits[si])?;
            log::info!(
                "q={} seed={} finished after {} rounds, objective {:.6}",
                q_grid[qi],
                seeds[si],
                result.rounds_executed,
                result.final_objective()
            );
            Ok(result)
        })
        .collect::<Result<_>>()?;

    let runs: Vec<RunSummary> = pairs
        .iter()
        .zip(&results)
        .map(|(&(qi, si), r)| RunSummary::from_run(q_grid[qi], seeds[si], r))
        .collect::<Result<_>>()?;

    let per_q: Vec<QSummary> = q_grid
        .iter()
        .map(|&q| {
            let of_q: Vec<&RunSummary> = runs.iter().filter(|r| r.q == q).collect();
            let collect = |get: fn(&RunSummary) -> &DistributionStats| {
                aggregate_over_seeds(&of_q.iter().map(|r| get(r).clone()).collect::<Vec<_>>())
            };
            Ok(QSummary {
                q,
                train: collect(|r| &r.train_stats)?,
                val: collect(|r| &r.val_stats)?,
                test: collect(|r| &r.test_stats)?,
            })
        })
        .collect::<Result<_>>()?;
    let selected_q = select_q(&per_q, spec.accuracy_drop_tolerance)?;

    let device_specific = if spec.device_specific {
        let model_spec = ModelSpec::for_dataset(dataset, spec.base.svm_ridge)?;
        let per_seed: Vec<SeedSelection> = seeds
            .iter()
            .enumerate()
            .map(|(si, &seed)| {
                let models: Vec<_> = pairs
                    .iter()
                    .zip(&results)
                    .filter(|((_, s), _)| *s == si)
                    .map(|((qi, _), r)| (q_grid[*qi], r.params()))
                    .collect();
                let devices = DeviceData::from_dataset(&splits[si]);
                let result = device_specific_selection(&model_spec, &devices, &models, selected_q)?;
                Ok(SeedSelection { seed, result })
            })
            .collect::<Result<_>>()?;
        let test = aggregate_over_seeds(&per_seed.iter().map(|s| s.result.test_stats.clone()).collect::<Vec<_>>())?;
        let val = aggregate_over_seeds(&per_seed.iter().map(|s| s.result.val_stats.clone()).collect::<Vec<_>>())?;
        Some(DeviceSpecificReport { per_seed, test, val })
    } else {
        None
    };

    Ok(SweepReport {
        spec: spec.clone(),
        dataset: DatasetSummary::of(dataset),
        lipschitz,
        lipschitz_probe,
        runs,
        per_q,
        selected_q,
        device_specific,
    })
}

pub fn save_sweep(report: &SweepReport, path: &Path) -> Result<()> {
    crate::data::write_text(path, &crate::data::to_json(report))
}

pub fn load_sweep(path: &Path) -> Result<SweepReport> {
    crate::data::from_json(path)
}

pub fn save_run(result: &RunResult, path: &Path) -> Result<()> {
    crate::data::write_text(path, &crate::data::to_json(result))
}

pub fn load_run(path: &Path) -> Result<RunResult> {
    crate::data::from_json(path)
}

/// One row per q: `q,runs,` followed by the `mean±std` columns.
pub fn summary_csv(per_q: &[QSummary], split: Split) -> String {
    let mut out = format!("q,runs,{}\n", AggregatedStats::CSV_HEADER);
    for s in per_q {
        let stats = match split {
            Split::Train => &s.train,
            Split::Val => &s.val,
            Split::Test => &s.test,
        };
        out.push_str(&format!("{},{},{}\n", s.q, stats.runs, stats.csv_fields()));
    }
    out
}
