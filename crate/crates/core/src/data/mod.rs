//! Federated datasets: per-device shards, train/val/test splits, sampling
//! weights, the synthetic heterogeneous generator and manifest-based I/O.

mod io;
mod synthetic;

use std::path::PathBuf;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rngdet::SeededStream;

pub(crate) use io::{from_json, to_json, write_text};
pub use io::{load_csv_manifest, save_csv_manifest, DeviceEntry, Manifest, SplitFile};
pub(crate) use synthetic::argmax_first;
pub use synthetic::{
    generate_synthetic, generate_synthetic_with_params, power_law_size, sizes_from_power_law,
    GeneratingParams, SyntheticMode, SyntheticSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Softmax,
    Svm,
}

impl Task {
    pub fn label_is_valid(self, label: i64, num_classes: usize) -> bool {
        match self {
            Task::Softmax => label >= 0 && (label as usize) < num_classes,
            Task::Svm => label == -1 || label == 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Rows selected from a shard, owned so they can be handed to model code.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Array2<f64>,
    pub labels: Vec<i64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Batch {
        Batch {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceShard {
    pub device_id: usize,
    pub features: Array2<f64>,
    pub labels: Vec<i64>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl DeviceShard {
    /// A shard with every row in the training split.
    pub fn new(device_id: usize, features: Array2<f64>, labels: Vec<i64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "device {device_id}: {} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        let train_idx = (0..labels.len()).collect();
        Ok(Self {
            device_id,
            features,
            labels,
            train_idx,
            val_idx: Vec::new(),
            test_idx: Vec::new(),
        })
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train_idx,
            Split::Val => &self.val_idx,
            Split::Test => &self.test_idx,
        }
    }

    pub fn batch(&self, split: Split) -> Batch {
        let rows = self.indices(split);
        Batch {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Checks that the three index lists partition `0..n_k`.
    pub fn validate_splits(&self) -> Result<()> {
        let n = self.num_samples();
        let mut seen = vec![false; n];
        for &i in self
            .train_idx
            .iter()
            .chain(&self.val_idx)
            .chain(&self.test_idx)
        {
            if i >= n {
                return Err(Error::Shape(format!(
                    "device {}: split index {i} out of range for {n} rows",
                    self.device_id
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Shape(format!(
                    "device {}: row {i} appears in more than one split",
                    self.device_id
                )));
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Shape(format!(
                "device {}: row {missing} is not assigned to any split",
                self.device_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Provenance {
    Synthetic(SyntheticSpec),
    Manifest { path: PathBuf },
    InMemory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    pub shards: Vec<DeviceShard>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub task: Task,
    pub provenance: Provenance,
}

impl FederatedDataset {
    pub fn new(
        shards: Vec<DeviceShard>,
        feature_dim: usize,
        num_classes: usize,
        task: Task,
        provenance: Provenance,
    ) -> Result<Self> {
        let dataset = Self {
            shards,
            feature_dim,
            num_classes,
            task,
            provenance,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shards.is_empty() {
            return Err(Error::InvalidConfig("dataset has no devices".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        match self.task {
            Task::Softmax if self.num_classes < 2 => {
                return Err(Error::InvalidConfig("softmax needs num_classes >= 2".into()))
            }
            Task::Svm if self.num_classes != 2 => {
                return Err(Error::InvalidConfig("svm datasets have num_classes = 2".into()))
            }
            _ => {}
        }
        for shard in &self.shards {
            if shard.features.ncols() != self.feature_dim {
                return Err(Error::Shape(format!(
                    "device {} has {} features, dataset declares {}",
                    shard.device_id,
                    shard.features.ncols(),
                    self.feature_dim
                )));
            }
            if let Some(row) = shard
                .labels
                .iter()
                .position(|&y| !self.task.label_is_valid(y, self.num_classes))
            {
                return Err(Error::Shape(format!(
                    "device {} row {row}: label {} invalid for {:?} with {} classes",
                    shard.device_id, shard.labels[row], self.task, self.num_classes
                )));
            }
            shard.validate_splits()?;
        }
        Ok(())
    }

    pub fn num_devices(&self) -> usize {
        self.shards.len()
    }

    pub fn total_samples(&self) -> usize {
        self.shards.iter().map(DeviceShard::num_samples).sum()
    }

    pub fn device_ids(&self) -> Vec<usize> {
        self.shards.iter().map(|s| s.device_id).collect()
    }
}

/// Number of rows held out for each of validation and test on a device with `n` rows.
pub fn holdout_size(n: usize) -> usize {
    n / 10
}

/// Assigns an 80/10/10 train/val/test split per shard from a seeded shuffle.
///
/// Validation and test each get `floor(0.1 n_k)` rows, training gets the
/// rest, so shards with fewer than ten rows have empty val/test splits.
/// Index lists are stored sorted.
pub fn split_dataset(dataset: &FederatedDataset, seed: u64) -> Result<FederatedDataset> {
    let mut out = dataset.clone();
    for shard in &mut out.shards {
        let n = shard.num_samples();
        if n == 0 {
            return Err(Error::EmptySamples);
        }
        let perm = SeededStream::new(seed, format!("split:device:{}", shard.device_id)).permutation(n);
        let hold = holdout_size(n);
        let mut val = perm[..hold].to_vec();
        let mut test = perm[hold..2 * hold].to_vec();
        let mut train = perm[2 * hold..].to_vec();
        val.sort_unstable();
        test.sort_unstable();
        train.sort_unstable();
        shard.train_idx = train;
        shard.val_idx = val;
        shard.test_idx = test;
    }
    Ok(out)
}

/// `p_k = |train_k| / sum_j |train_j|`.
pub fn sampling_weights(dataset: &FederatedDataset) -> Result<Vec<f64>> {
    let sizes: Vec<usize> = dataset.shards.iter().map(|s| s.train_idx.len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "total training size is zero; cannot form sampling weights".into(),
        ));
    }
    Ok(sizes
        .into_iter()
        .map(|n| n as f64 / total as f64)
        .collect())
}
