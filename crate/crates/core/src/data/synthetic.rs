//! Synthetic heterogeneous federated data.
//!
//! Each device k owns a linear softmax labeller `(W_k, b_k)` and a feature
//! mean `v_k`:
//!
//! * `u_k ~ N(0, 1)`, entries of `W_k` and `b_k` drawn from `N(u_k, 1)`;
//! * `B_k ~ N(0, 1)`, entries of `v_k` drawn from `N(B_k, 1)`;
//! * rows `x ~ N(v_k, diag(j^-1.2))` for `j = 1..=d`;
//! * label `y = argmax(W_k x + b_k)`, ties to the smallest class.
//!
//! In IID mode every device shares one `(W, b, v)` drawn with `u = B = 0`.
//! Hybrid mode makes the first `ceil(m / 2)` devices IID and the rest non-IID.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{DeviceShard, FederatedDataset, Provenance, Task};
use crate::error::{Error, Result};
use crate::rngdet::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticMode {
    Noniid,
    Iid,
    Hybrid,
}

impl std::str::FromStr for SyntheticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noniid" => Ok(Self::Noniid),
            "iid" => Ok(Self::Iid),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(Error::InvalidConfig(format!(
                "unknown synthetic mode '{other}' (expected noniid, iid or hybrid)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_devices: usize,
    pub mode: SyntheticMode,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub size_min: usize,
    pub size_exponent: f64,
    pub size_max: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_devices: 100,
            mode: SyntheticMode::Noniid,
            feature_dim: 60,
            num_classes: 10,
            size_min: 15,
            size_exponent: 1.5,
            size_max: 1000,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.num_devices == 0 {
            return bad("synthetic.num_devices must be >= 1");
        }
        if self.size_min < 3 {
            return bad("synthetic.size_min must be >= 3");
        }
        if !(self.size_exponent > 1.0) || !self.size_exponent.is_finite() {
            return bad("synthetic.size_exponent must be a finite number > 1");
        }
        if self.size_max < self.size_min {
            return bad("synthetic.size_max must be >= size_min");
        }
        if self.feature_dim == 0 {
            return bad("synthetic.feature_dim must be >= 1");
        }
        if self.num_classes < 2 {
            return bad("synthetic.num_classes must be >= 2");
        }
        Ok(())
    }
}

/// The hidden labeller and feature mean behind one device's samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratingParams {
    /// `num_classes x feature_dim`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub feature_mean: Array1<f64>,
}

impl GeneratingParams {
    fn draw(stream: &mut SeededStream, classes: usize, dim: usize, heterogeneous: bool) -> Self {
        let u = if heterogeneous { stream.gaussian() } else { 0.0 };
        let weights = Array2::from_shape_simple_fn((classes, dim), || stream.normal(u, 1.0));
        let bias = Array1::from_shape_simple_fn(classes, || stream.normal(u, 1.0));
        let b = if heterogeneous { stream.gaussian() } else { 0.0 };
        let feature_mean = Array1::from_shape_simple_fn(dim, || stream.normal(b, 1.0));
        Self {
            weights,
            bias,
            feature_mean,
        }
    }

    /// Index of the largest score `W x + b`, ties to the smallest index.
    pub fn label(&self, x: ndarray::ArrayView1<f64>) -> i64 {
        let scores = self.weights.dot(&x) + &self.bias;
        argmax_first(scores.iter().copied()) as i64
    }
}

pub(crate) fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Inverse-CDF of the truncated Pareto size law for one uniform draw `u` in `(0, 1]`.
pub fn power_law_size(u: f64, size_min: usize, size_exponent: f64, size_max: usize) -> usize {
    let raw = size_min as f64 * u.powf(-1.0 / (size_exponent - 1.0));
    if raw >= size_max as f64 {
        size_max
    } else {
        (raw.floor() as usize).clamp(size_min, size_max)
    }
}

pub fn sizes_from_power_law(
    num_devices: usize,
    size_min: usize,
    size_exponent: f64,
    size_max: usize,
    stream: &mut SeededStream,
) -> Vec<usize> {
    (0..num_devices)
        .map(|_| power_law_size(stream.uniform_open0(), size_min, size_exponent, size_max))
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FederatedDataset> {
    generate_synthetic_with_params(spec).map(|(dataset, _)| dataset)
}

/// Like [`generate_synthetic`], also returning each device's generating parameters.
pub fn generate_synthetic_with_params(
    spec: &SyntheticSpec,
) -> Result<(FederatedDataset, Vec<GeneratingParams>)> {
    spec.validate()?;
    let (classes, dim) = (spec.num_classes, spec.feature_dim);
    let sizes = sizes_from_power_law(
        spec.num_devices,
        spec.size_min,
        spec.size_exponent,
        spec.size_max,
        &mut SeededStream::new(spec.seed, "synthetic:sizes"),
    );
    let global = GeneratingParams::draw(
        &mut SeededStream::new(spec.seed, "synthetic:global"),
        classes,
        dim,
        false,
    );
    let iid_devices = match spec.mode {
        SyntheticMode::Iid => spec.num_devices,
        SyntheticMode::Noniid => 0,
        SyntheticMode::Hybrid => spec.num_devices.div_ceil(2),
    };
    let feature_std: Vec<f64> = (1..=dim).map(|j| (j as f64).powf(-1.2).sqrt()).collect();

    let mut shards = Vec::with_capacity(spec.num_devices);
    let mut params = Vec::with_capacity(spec.num_devices);
    for (k, &n) in sizes.iter().enumerate() {
        let device_params = if k < iid_devices {
            global.clone()
        } else {
            let mut stream = SeededStream::new(spec.seed, format!("synthetic:device:{k}:params"));
            GeneratingParams::draw(&mut stream, classes, dim, true)
        };
        let mut stream = SeededStream::new(spec.seed, format!("synthetic:device:{k}:samples"));
        let mut features = Array2::zeros((n, dim));
        for mut row in features.rows_mut() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = stream.normal(device_params.feature_mean[j], feature_std[j]);
            }
        }
        let labels = features
            .rows()
            .into_iter()
            .map(|row| device_params.label(row))
            .collect();
        shards.push(DeviceShard::new(k, features, labels)?);
        params.push(device_params);
    }
    let dataset = FederatedDataset::new(
        shards,
        dim,
        classes,
        Task::Softmax,
        Provenance::Synthetic(spec.clone()),
    )?;
    Ok((dataset, params))
}
