//! Manifest + per-device CSV storage.
//!
//! ```text
//! manifest.json          {"task", "feature_dim", "num_classes", "devices": [{"id", "file"}]}
//! device_0000.csv        f0,...,f{d-1},label
//! device_0000.csv.split.json   {"train": [...], "val": [...], "test": [...]}
//! ```
//!
//! Features are written with Rust's shortest round-trip float formatting,
//! so a save/load cycle reproduces every value bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DeviceShard, FederatedDataset, Provenance, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub task: Task,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub devices: Vec<DeviceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceEntry {
    pub id: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn split_path(device_file: &Path) -> PathBuf {
    let mut name = device_file.as_os_str().to_owned();
    name.push(".split.json");
    PathBuf::from(name)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.json`, one CSV per device and its split file into `dir`.
/// Returns the manifest path.
pub fn save_csv_manifest(dataset: &FederatedDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header: Vec<String> = (0..dataset.feature_dim)
        .map(|j| format!("f{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();

    let mut devices = Vec::with_capacity(dataset.num_devices());
    for shard in &dataset.shards {
        let file = format!("device_{:04}.csv", shard.device_id);
        let path = dir.join(&file);
        let mut writer = csv::Writer::from_path(&path)
            .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        let csv_err = |e: csv::Error| Error::io(&path, std::io::Error::other(e));
        writer.write_record(&header).map_err(csv_err)?;
        let mut record = Vec::with_capacity(dataset.feature_dim + 1);
        for (row, label) in shard.features.rows().into_iter().zip(&shard.labels) {
            record.clear();
            record.extend(row.iter().map(|x| x.to_string()));
            record.push(label.to_string());
            writer.write_record(&record).map_err(csv_err)?;
        }
        writer.flush().map_err(|e| Error::io(&path, e))?;

        let split = SplitFile {
            train: shard.train_idx.clone(),
            val: shard.val_idx.clone(),
            test: shard.test_idx.clone(),
        };
        write_text(&split_path(&path), &to_json(&split))?;
        devices.push(DeviceEntry {
            id: shard.device_id,
            file,
        });
    }

    let manifest = Manifest {
        task: dataset.task,
        feature_dim: dataset.feature_dim,
        num_classes: dataset.num_classes,
        devices,
    };
    let manifest_path = dir.join("manifest.json");
    write_text(&manifest_path, &to_json(&manifest))?;
    Ok(manifest_path)
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    text
}

pub(crate) fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, &text, e))
}

pub fn load_csv_manifest(path: &Path) -> Result<FederatedDataset> {
    let manifest: Manifest = from_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let d = manifest.feature_dim;

    let mut shards = Vec::with_capacity(manifest.devices.len());
    for entry in &manifest.devices {
        let file = base.join(&entry.file);
        let load_err = |row: usize, message: String| Error::Load {
            file: file.clone(),
            row,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(&file)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(&file, io),
                other => load_err(0, format!("{other:?}")),
            })?;
        let header = reader
            .headers()
            .map_err(|e| load_err(0, e.to_string()))?
            .clone();
        if header.len() != d + 1 {
            return Err(load_err(
                0,
                format!("header has {} columns, manifest declares {d} features + label", header.len()),
            ));
        }
        if header.get(d) != Some("label") {
            return Err(load_err(0, "last header column must be 'label'".into()));
        }

        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| load_err(row, e.to_string()))?;
            if record.len() != d + 1 {
                return Err(load_err(
                    row,
                    format!("expected {} columns, found {}", d + 1, record.len()),
                ));
            }
            for (j, field) in record.iter().take(d).enumerate() {
                let x: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| load_err(row, format!("column f{j}: '{field}' is not a number")))?;
                if !x.is_finite() {
                    return Err(load_err(row, format!("column f{j}: non-finite value")));
                }
                values.push(x);
            }
            let raw = &record[d];
            let label: i64 = raw
                .trim()
                .parse()
                .map_err(|_| load_err(row, format!("label '{raw}' is not an integer")))?;
            if !manifest.task.label_is_valid(label, manifest.num_classes) {
                return Err(load_err(
                    row,
                    format!(
                        "label {label} invalid for task {:?} with {} classes",
                        manifest.task, manifest.num_classes
                    ),
                ));
            }
            labels.push(label);
        }
        if labels.is_empty() {
            return Err(load_err(0, "device file has no samples".into()));
        }
        let features = Array2::from_shape_vec((labels.len(), d), values)
            .map_err(|e| load_err(0, e.to_string()))?;
        let mut shard = DeviceShard::new(entry.id, features, labels)?;

        let split_file = split_path(&file);
        if split_file.exists() {
            let split: SplitFile = from_json(&split_file)?;
            shard.train_idx = split.train;
            shard.val_idx = split.val;
            shard.test_idx = split.test;
            shard
                .validate_splits()
                .map_err(|e| load_err(0, format!("bad split file: {e}")))?;
        }
        shards.push(shard);
    }

    FederatedDataset::new(
        shards,
        d,
        manifest.num_classes,
        manifest.task,
        Provenance::Manifest {
            path: path.to_path_buf(),
        },
    )
}
