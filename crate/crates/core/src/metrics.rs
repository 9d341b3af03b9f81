//! Fairness statistics over per-device accuracy distributions.
//!
//! Accuracies are stored as fractions and reported in percent; variance is
//! the population variance of the percent values (percent squared).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyDistribution {
    pub accs: Vec<f64>,
    /// Samples behind each accuracy (test-split sizes for test accuracies).
    pub weights: Vec<usize>,
    pub device_ids: Vec<usize>,
}

impl AccuracyDistribution {
    pub fn new(accs: Vec<f64>, weights: Vec<usize>, device_ids: Vec<usize>) -> Result<Self> {
        if accs.is_empty() {
            return Err(Error::InvalidArgument("accuracy distribution is empty".into()));
        }
        if accs.len() != weights.len() || accs.len() != device_ids.len() {
            return Err(Error::Shape(format!(
                "{} accuracies, {} weights, {} device ids",
                accs.len(),
                weights.len(),
                device_ids.len()
            )));
        }
        if accs.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument("accuracies must lie in [0, 1]".into()));
        }
        if weights.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument("every device needs at least one sample".into()));
        }
        Ok(Self {
            accs,
            weights,
            device_ids,
        })
    }

    /// Keeps the devices whose accuracy is defined.
    pub fn from_optional(device_ids: &[usize], accs: &[Option<f64>], counts: &[usize]) -> Result<Self> {
        let mut out = (Vec::new(), Vec::new(), Vec::new());
        for ((&id, acc), &n) in device_ids.iter().zip(accs).zip(counts) {
            if let Some(a) = acc {
                out.0.push(*a);
                out.1.push(n);
                out.2.push(id);
            }
        }
        Self::new(out.0, out.1, out.2)
    }

    pub fn len(&self) -> usize {
        self.accs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub mean_data_weighted: f64,
    pub mean_device: f64,
    pub worst10: f64,
    pub best10: f64,
    pub variance: f64,
    pub device_ids: Vec<usize>,
}

/// Size of the worst/best cohort: `ceil(0.1 m)`, at least one device.
pub fn cohort_size(m: usize) -> usize {
    m.div_ceil(10).max(1)
}

pub fn distribution_stats(dist: &AccuracyDistribution) -> Result<DistributionStats> {
    if dist.is_empty() {
        return Err(Error::InvalidArgument("accuracy distribution is empty".into()));
    }
    let m = dist.len() as f64;
    let pct: Vec<f64> = dist.accs.iter().map(|a| 100.0 * a).collect();

    let total_weight: f64 = dist.weights.iter().map(|&w| w as f64).sum();
    let mean_data_weighted = pct
        .iter()
        .zip(&dist.weights)
        .map(|(a, &w)| a * w as f64)
        .sum::<f64>()
        / total_weight;
    let mean_device = pct.iter().sum::<f64>() / m;

    // shifted two-pass variance: exactly zero for a constant distribution
    let shift = pct[0];
    let dev_mean = pct.iter().map(|a| a - shift).sum::<f64>() / m;
    let variance = (pct.iter().map(|a| (a - shift - dev_mean).powi(2)).sum::<f64>() / m).max(0.0);

    let mut order: Vec<usize> = (0..pct.len()).collect();
    order.sort_by(|&i, &j| {
        pct[i]
            .total_cmp(&pct[j])
            .then(dist.device_ids[i].cmp(&dist.device_ids[j]))
    });
    let k = cohort_size(pct.len());
    let cohort_mean = |idx: &[usize]| idx.iter().map(|&i| pct[i]).sum::<f64>() / idx.len() as f64;
    let worst10 = cohort_mean(&order[..k]);
    let best10 = cohort_mean(&order[order.len() - k..]);

    Ok(DistributionStats {
        mean_data_weighted,
        mean_device,
        worst10,
        best10,
        variance,
        device_ids: dist.device_ids.clone(),
    })
}

fn same_devices(a: &[usize], b: &[usize]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    a == b
}

/// True when `a` has strictly lower accuracy variance over the same devices.
pub fn is_fairer(a: &DistributionStats, b: &DistributionStats) -> Result<bool> {
    if !same_devices(&a.device_ids, &b.device_ids) {
        return Err(Error::DeviceSetMismatch(format!(
            "{} devices vs {} devices",
            a.device_ids.len(),
            b.device_ids.len()
        )));
    }
    Ok(a.variance < b.variance)
}

/// Equal-width bins over `[0, 1]`; the last bin is closed on the right.
pub fn histogram(dist: &AccuracyDistribution, num_bins: usize) -> Vec<usize> {
    let bins = num_bins.max(1);
    let mut counts = vec![0; bins];
    for &a in &dist.accs {
        let idx = ((a * bins as f64).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
}

/// `bin_lo,bin_hi,count` rows for [`histogram`] output.
pub fn histogram_csv(counts: &[usize]) -> String {
    let bins = counts.len();
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, c) in counts.iter().enumerate() {
        let lo = i as f64 / bins as f64;
        let hi = (i + 1) as f64 / bins as f64;
        out.push_str(&format!("{lo},{hi},{c}\n"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and sample standard deviation (n - 1); std is 0 for one value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2}±{:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedStats {
    pub runs: usize,
    pub mean_data_weighted: MeanStd,
    pub mean_device: MeanStd,
    pub worst10: MeanStd,
    pub best10: MeanStd,
    pub variance: MeanStd,
}

impl AggregatedStats {
    pub const CSV_HEADER: &'static str =
        "average_data,average_device,worst10,best10,variance";

    /// Columns as `mean±std`, in the order of [`Self::CSV_HEADER`].
    pub fn csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.mean_data_weighted, self.mean_device, self.worst10, self.best10, self.variance
        )
    }
}

pub fn aggregate_over_seeds(stats: &[DistributionStats]) -> Result<AggregatedStats> {
    if stats.is_empty() {
        return Err(Error::InvalidArgument("no statistics to aggregate".into()));
    }
    let field = |get: fn(&DistributionStats) -> f64| MeanStd::of(&stats.iter().map(get).collect::<Vec<_>>());
    Ok(AggregatedStats {
        runs: stats.len(),
        mean_data_weighted: field(|s| s.mean_data_weighted),
        mean_device: field(|s| s.mean_device),
        worst10: field(|s| s.worst10),
        best10: field(|s| s.best10),
        variance: field(|s| s.variance),
    })
}
