//! Linear model families and the per-device empirical risk.
//!
//! Parameters are a flat vector. Softmax stores the `C x d` weight matrix
//! row-major followed by `C` biases. SVM stores `d` weights then one bias.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Batch, FederatedDataset, Task};
use crate::error::{Error, Result};

pub type ParamVector = Array1<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "task")]
pub enum ModelSpec {
    Softmax { num_classes: usize, feature_dim: usize },
    Svm { feature_dim: usize, ridge: f64 },
}

impl ModelSpec {
    pub fn for_dataset(dataset: &FederatedDataset, ridge: f64) -> Result<Self> {
        let spec = match dataset.task {
            Task::Softmax => ModelSpec::Softmax {
                num_classes: dataset.num_classes,
                feature_dim: dataset.feature_dim,
            },
            Task::Svm => ModelSpec::Svm {
                feature_dim: dataset.feature_dim,
                ridge,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelSpec::Softmax { num_classes, feature_dim } => {
                if num_classes < 2 || feature_dim < 1 {
                    return Err(Error::InvalidConfig(format!(
                        "softmax model needs C >= 2 and d >= 1, got C={num_classes}, d={feature_dim}"
                    )));
                }
            }
            ModelSpec::Svm { feature_dim, ridge } => {
                if feature_dim < 1 || !(ridge >= 0.0) || !ridge.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "svm model needs d >= 1 and ridge >= 0, got d={feature_dim}, ridge={ridge}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        match *self {
            ModelSpec::Softmax { feature_dim, .. } | ModelSpec::Svm { feature_dim, .. } => feature_dim,
        }
    }

    pub fn num_params(&self) -> usize {
        match *self {
            ModelSpec::Softmax { num_classes, feature_dim } => num_classes * feature_dim + num_classes,
            ModelSpec::Svm { feature_dim, .. } => feature_dim + 1,
        }
    }

    pub fn zeros(&self) -> ParamVector {
        Array1::zeros(self.num_params())
    }

    fn check(&self, params: &ParamVector, features: ArrayView2<f64>, labels: &[i64]) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::EmptySamples);
        }
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "parameter vector has length {}, model expects {}",
                params.len(),
                self.num_params()
            )));
        }
        if features.nrows() != labels.len() || features.ncols() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "features are {}x{} with {} labels, model expects d={}",
                features.nrows(),
                features.ncols(),
                labels.len(),
                self.feature_dim()
            )));
        }
        if !params.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        if !features.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        let valid = match *self {
            ModelSpec::Softmax { num_classes, .. } => labels
                .iter()
                .all(|&y| Task::Softmax.label_is_valid(y, num_classes)),
            ModelSpec::Svm { .. } => labels.iter().all(|&y| Task::Svm.label_is_valid(y, 2)),
        };
        if !valid {
            return Err(Error::InvalidArgument("label outside the model's label set".into()));
        }
        Ok(())
    }
}

fn softmax_blocks(
    params: &ParamVector,
    num_classes: usize,
    feature_dim: usize,
) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
    let split = num_classes * feature_dim;
    let weights = params
        .slice(ndarray::s![..split])
        .into_shape_with_order((num_classes, feature_dim))
        .expect("contiguous parameter vector");
    (weights, params.slice(ndarray::s![split..]))
}

fn softmax_scores(params: &ParamVector, c: usize, d: usize, x: ArrayView2<f64>) -> Array2<f64> {
    let (w, b) = softmax_blocks(params, c, d);
    x.dot(&w.t()) + &b
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    max + row.iter().map(|&s| (s - max).exp()).sum::<f64>().ln()
}

fn svm_margins(params: &ParamVector, d: usize, x: ArrayView2<f64>, labels: &[i64]) -> Array1<f64> {
    let w = params.slice(ndarray::s![..d]);
    let b = params[d];
    let raw = x.dot(&w);
    Array1::from_iter(raw.iter().zip(labels).map(|(s, &y)| y as f64 * (s + b)))
}

fn ridge_penalty(params: &ParamVector, d: usize, ridge: f64) -> f64 {
    if ridge == 0.0 {
        return 0.0;
    }
    0.5 * ridge * params.slice(ndarray::s![..d]).iter().map(|w| w * w).sum::<f64>()
}

/// Mean per-sample loss `F_k` over the given rows.
pub fn loss(spec: &ModelSpec, params: &ParamVector, features: ArrayView2<f64>, labels: &[i64]) -> Result<f64> {
    spec.check(params, features, labels)?;
    let n = labels.len() as f64;
    let value = match *spec {
        ModelSpec::Softmax { num_classes, feature_dim } => {
            let scores = softmax_scores(params, num_classes, feature_dim, features);
            scores
                .rows()
                .into_iter()
                .zip(labels)
                .map(|(row, &y)| log_sum_exp(row) - row[y as usize])
                .sum::<f64>()
                / n
        }
        ModelSpec::Svm { feature_dim, ridge } => {
            let margins = svm_margins(params, feature_dim, features, labels);
            margins.iter().map(|m| (1.0 - m).max(0.0)).sum::<f64>() / n
                + ridge_penalty(params, feature_dim, ridge)
        }
    };
    // log-sum-exp minus one of its terms can round a hair below zero
    let value = value.max(0.0);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(value)
}

/// Exact (sub)gradient of [`loss`]. The hinge contributes only where the
/// margin is strictly below one.
pub fn gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    features: ArrayView2<f64>,
    labels: &[i64],
) -> Result<ParamVector> {
    loss_and_gradient(spec, params, features, labels).map(|(_, g)| g)
}

pub fn loss_and_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    features: ArrayView2<f64>,
    labels: &[i64],
) -> Result<(f64, ParamVector)> {
    spec.check(params, features, labels)?;
    let n = labels.len() as f64;
    let (value, grad) = match *spec {
        ModelSpec::Softmax { num_classes, feature_dim } => {
            let mut scores = softmax_scores(params, num_classes, feature_dim, features);
            let mut total = 0.0;
            for (mut row, &y) in scores.rows_mut().into_iter().zip(labels) {
                let lse = log_sum_exp(row.view());
                total += lse - row[y as usize];
                row.mapv_inplace(|s| (s - lse).exp());
                row[y as usize] -= 1.0;
            }
            // scores now holds softmax(s) - onehot(y)
            let grad_w = scores.t().dot(&features) / n;
            let grad_b = scores.sum_axis(Axis(0)) / n;
            let mut grad = Array1::zeros(spec.num_params());
            grad.slice_mut(ndarray::s![..num_classes * feature_dim])
                .assign(&Array1::from_iter(grad_w.iter().copied()));
            grad.slice_mut(ndarray::s![num_classes * feature_dim..]).assign(&grad_b);
            (total / n, grad)
        }
        ModelSpec::Svm { feature_dim, ridge } => {
            let margins = svm_margins(params, feature_dim, features, labels);
            let mut grad = Array1::zeros(feature_dim + 1);
            let mut hinge = 0.0;
            for ((row, &y), &m) in features.rows().into_iter().zip(labels).zip(&margins) {
                if m < 1.0 {
                    hinge += 1.0 - m;
                    let y = y as f64;
                    grad.slice_mut(ndarray::s![..feature_dim]).scaled_add(-y / n, &row);
                    grad[feature_dim] -= y / n;
                }
            }
            if ridge != 0.0 {
                grad.slice_mut(ndarray::s![..feature_dim])
                    .scaled_add(ridge, &params.slice(ndarray::s![..feature_dim]));
            }
            (hinge / n + ridge_penalty(params, feature_dim, ridge), grad)
        }
    };
    let value = value.max(0.0);
    if !value.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("loss or gradient"));
    }
    Ok((value, grad))
}

/// Fraction of rows classified correctly. Softmax ties go to the smallest
/// class index; the SVM predicts +1 on a zero score.
pub fn accuracy(spec: &ModelSpec, params: &ParamVector, features: ArrayView2<f64>, labels: &[i64]) -> Result<f64> {
    spec.check(params, features, labels)?;
    let correct = match *spec {
        ModelSpec::Softmax { num_classes, feature_dim } => {
            let scores = softmax_scores(params, num_classes, feature_dim, features);
            scores
                .rows()
                .into_iter()
                .zip(labels)
                .filter(|(row, &y)| crate::data::argmax_first(row.iter().copied()) as i64 == y)
                .count()
        }
        ModelSpec::Svm { feature_dim, .. } => {
            let w = params.slice(ndarray::s![..feature_dim]);
            let b = params[feature_dim];
            features
                .dot(&w)
                .iter()
                .zip(labels)
                .filter(|(s, &y)| if **s + b >= 0.0 { y == 1 } else { y == -1 })
                .count()
        }
    };
    Ok(correct as f64 / labels.len() as f64)
}

/// Central differences `(loss(w + h e_i) - loss(w - h e_i)) / 2h` per coordinate.
pub fn finite_diff_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    features: ArrayView2<f64>,
    labels: &[i64],
    h: f64,
) -> Result<ParamVector> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let mut probe = params.clone();
    let mut grad = Array1::zeros(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = raw_loss(spec, &probe, features, labels)?;
        probe[i] = orig - h;
        let down = raw_loss(spec, &probe, features, labels)?;
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

// loss without the clamp at zero, so differences stay smooth near a perfect fit
fn raw_loss(spec: &ModelSpec, params: &ParamVector, features: ArrayView2<f64>, labels: &[i64]) -> Result<f64> {
    spec.check(params, features, labels)?;
    let n = labels.len() as f64;
    Ok(match *spec {
        ModelSpec::Softmax { num_classes, feature_dim } => {
            let scores = softmax_scores(params, num_classes, feature_dim, features);
            scores
                .rows()
                .into_iter()
                .zip(labels)
                .map(|(row, &y)| log_sum_exp(row) - row[y as usize])
                .sum::<f64>()
                / n
        }
        ModelSpec::Svm { feature_dim, ridge } => {
            let margins = svm_margins(params, feature_dim, features, labels);
            margins.iter().map(|m| (1.0 - m).max(0.0)).sum::<f64>() / n
                + ridge_penalty(params, feature_dim, ridge)
        }
    })
}

/// Convenience wrappers over a [`Batch`].
impl ModelSpec {
    pub fn batch_loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        loss(self, params, batch.features.view(), &batch.labels)
    }

    pub fn batch_loss_and_gradient(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        loss_and_gradient(self, params, batch.features.view(), &batch.labels)
    }

    pub fn batch_gradient(&self, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        gradient(self, params, batch.features.view(), &batch.labels)
    }

    pub fn batch_accuracy(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        accuracy(self, params, batch.features.view(), &batch.labels)
    }
}
