//! Device-specific q selection: each device keeps the model (one per q)
//! with the best accuracy on its own validation split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::metrics::{distribution_stats, AccuracyDistribution, DistributionStats};
use crate::models::{ModelSpec, ParamVector};
use crate::solvers::{per_device_accuracy, DeviceData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpecificResult {
    /// device id -> chosen q
    pub assignment: BTreeMap<usize, f64>,
    pub per_device_val_acc: Vec<Option<f64>>,
    pub per_device_test_acc: Vec<Option<f64>>,
    pub val_stats: DistributionStats,
    pub test_stats: DistributionStats,
}

/// `models` holds one final model per q, all trained on the same split.
/// Devices without validation data fall back to `fallback_q`.
pub fn device_specific_selection(
    spec: &ModelSpec,
    devices: &[DeviceData],
    models: &[(f64, ParamVector)],
    fallback_q: f64,
) -> Result<DeviceSpecificResult> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models to select from".into()));
    }
    let fallback = models
        .iter()
        .position(|(q, _)| *q == fallback_q)
        .ok_or_else(|| Error::InvalidArgument(format!("fallback q={fallback_q} has no model")))?;
    let mut candidates: Vec<usize> = (0..models.len()).collect();
    candidates.sort_by(|&a, &b| models[a].0.total_cmp(&models[b].0));

    let val: Vec<Vec<Option<f64>>> = models
        .iter()
        .map(|(_, w)| per_device_accuracy(spec, devices, w, Split::Val))
        .collect::<Result<_>>()?;
    let test: Vec<Vec<Option<f64>>> = models
        .iter()
        .map(|(_, w)| per_device_accuracy(spec, devices, w, Split::Test))
        .collect::<Result<_>>()?;

    let mut assignment = BTreeMap::new();
    let mut per_device_val_acc = Vec::with_capacity(devices.len());
    let mut per_device_test_acc = Vec::with_capacity(devices.len());
    for (pos, device) in devices.iter().enumerate() {
        let choice = if device.val.is_empty() {
            fallback
        } else {
            // ascending q with strict improvement keeps the smallest q on ties
            let mut best = candidates[0];
            for &c in &candidates[1..] {
                if val[c][pos] > val[best][pos] {
                    best = c;
                }
            }
            best
        };
        assignment.insert(device.device_id, models[choice].0);
        per_device_val_acc.push(val[choice][pos]);
        per_device_test_acc.push(test[choice][pos]);
    }

    let ids: Vec<usize> = devices.iter().map(|d| d.device_id).collect();
    let counts = |split| devices.iter().map(|d| d.split(split).len()).collect::<Vec<_>>();
    let val_stats = distribution_stats(&AccuracyDistribution::from_optional(
        &ids,
        &per_device_val_acc,
        &counts(Split::Val),
    )?)?;
    let test_stats = distribution_stats(&AccuracyDistribution::from_optional(
        &ids,
        &per_device_test_acc,
        &counts(Split::Test),
    )?)?;
    Ok(DeviceSpecificResult {
        assignment,
        per_device_val_acc,
        per_device_test_acc,
        val_stats,
        test_stats,
    })
}
