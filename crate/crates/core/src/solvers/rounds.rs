use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DeviceData;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::models::{ModelSpec, ParamVector};
use crate::objective::{floor_loss, lipschitz_estimate};
use crate::rngdet::SeededStream;

/// Draws `k` distinct indices, each draw proportional to the remaining
/// weights (sequential sampling without replacement).
pub fn sample_devices(p: &[f64], k: usize, stream: &mut SeededStream) -> Result<Vec<usize>> {
    if p.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("sampling weights must be finite and >= 0".into()));
    }
    let available = p.iter().filter(|&&w| w > 0.0).count();
    if k > available {
        return Err(Error::Sampling {
            requested: k,
            available,
        });
    }
    let mut remaining = p.to_vec();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().sum();
        let target = stream.uniform01() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in remaining.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if target < acc {
                break;
            }
        }
        // pick falls back to the last positive weight when rounding leaves target >= acc
        let i = pick.expect("at least one positive weight remains");
        remaining[i] = 0.0;
        chosen.push(i);
    }
    Ok(chosen)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalSgd {
    pub epochs: usize,
    pub eta: f64,
    pub batch_size: usize,
}

/// `epochs` passes of mini-batch SGD over `train`, reshuffling every epoch.
pub fn local_sgd(
    spec: &ModelSpec,
    params: &ParamVector,
    train: &Batch,
    sgd: &LocalSgd,
    stream: &mut SeededStream,
) -> Result<ParamVector> {
    if train.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut w = params.clone();
    if sgd.eta == 0.0 {
        return Ok(w);
    }
    let n = train.len();
    for _ in 0..sgd.epochs {
        let order = stream.permutation(n);
        for chunk in order.chunks(sgd.batch_size.max(1)) {
            let batch = if chunk.len() == n { train.clone() } else { train.select(chunk) };
            let grad = spec.batch_gradient(&w, &batch)?;
            w.scaled_add(-sgd.eta, &grad);
        }
    }
    Ok(w)
}

/// Message a selected device sends to the server in the q-solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceUpdate {
    pub device_id: usize,
    pub delta: ParamVector,
    pub h: f64,
}

fn sgd_stream(seed: u64, round: usize, device_id: usize) -> SeededStream {
    SeededStream::new(seed, format!("sgd:round:{round}:device:{device_id}"))
}

/// Selected positions ordered by device id, the server's reduction order.
fn by_device_id(devices: &[DeviceData], selected: &[usize]) -> Result<Vec<usize>> {
    if let Some(&bad) = selected.iter().find(|&&i| i >= devices.len()) {
        return Err(Error::InvalidArgument(format!("selected device index {bad} out of range")));
    }
    let mut order = selected.to_vec();
    order.sort_by_key(|&i| devices[i].device_id);
    Ok(order)
}

fn loss_power(f: f64, q: f64, eps_floor: f64) -> f64 {
    if q == 0.0 {
        1.0
    } else {
        floor_loss(f, q, eps_floor).powf(q)
    }
}

fn norm_sq(v: &ParamVector) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `w - sum(delta_k) / sum(h_k)`, both sums in the given order.
fn apply_updates(w: &ParamVector, updates: &[DeviceUpdate]) -> Result<ParamVector> {
    let mut delta_sum = Array1::zeros(w.len());
    let mut h_sum = 0.0;
    for u in updates {
        delta_sum += &u.delta;
        h_sum += u.h;
    }
    if !(h_sum > 0.0) || !h_sum.is_finite() {
        return Err(Error::NonFinite("sum of h_k"));
    }
    let next = w - &(delta_sum / h_sum);
    if !next.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("server update"));
    }
    Ok(next)
}

/// FedAvg: selected devices run local SGD from `w` and the server averages
/// the returned models with equal weight.
///
/// The average is applied as `w - (1/K) sum_k (w - w_k)`, the same reduction
/// the q-solvers use, so q-FedAvg at q = 0 with L-scaled deltas reproduces
/// it exactly when L is a power of two.
pub fn fedavg_round(
    spec: &ModelSpec,
    devices: &[DeviceData],
    w: &ParamVector,
    selected: &[usize],
    sgd: &LocalSgd,
    seed: u64,
    round: usize,
) -> Result<ParamVector> {
    let order = by_device_id(devices, selected)?;
    if order.is_empty() {
        return Err(Error::InvalidArgument("no devices selected".into()));
    }
    let locals: Vec<ParamVector> = order
        .par_iter()
        .map(|&i| {
            let d = &devices[i];
            local_sgd(spec, w, &d.train, sgd, &mut sgd_stream(seed, round, d.device_id))
        })
        .collect::<Result<_>>()?;
    let mut moved = Array1::zeros(w.len());
    for local in &locals {
        moved += &(w - local);
    }
    let next = w - &(moved / order.len() as f64);
    if !next.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("server update"));
    }
    Ok(next)
}

/// q-FedSGD: `Delta_k = F_k^q grad F_k`, `h_k = q F_k^{q-1} ||grad F_k||^2 + L F_k^q`,
/// all at `w` on the full training split.
pub fn qfedsgd_round(
    spec: &ModelSpec,
    devices: &[DeviceData],
    w: &ParamVector,
    selected: &[usize],
    q: f64,
    lipschitz: f64,
    eps_floor: f64,
) -> Result<ParamVector> {
    let order = by_device_id(devices, selected)?;
    let updates: Vec<DeviceUpdate> = order
        .par_iter()
        .map(|&i| {
            let d = &devices[i];
            let (f, grad) = spec.batch_loss_and_gradient(w, &d.train)?;
            Ok(DeviceUpdate {
                device_id: d.device_id,
                h: lipschitz_estimate(lipschitz, q, f, norm_sq(&grad), eps_floor),
                delta: grad * loss_power(f, q, eps_floor),
            })
        })
        .collect::<Result<_>>()?;
    apply_updates(w, &updates)
}

/// q-FedAvg: the gradient of q-FedSGD is replaced by the local model change
/// `Delta w_k = w - w_k` after local SGD (times L when `scale_delta_by_l`).
#[allow(clippy::too_many_arguments)]
pub fn qfedavg_round(
    spec: &ModelSpec,
    devices: &[DeviceData],
    w: &ParamVector,
    selected: &[usize],
    q: f64,
    lipschitz: f64,
    eps_floor: f64,
    scale_delta_by_l: bool,
    sgd: &LocalSgd,
    seed: u64,
    round: usize,
) -> Result<ParamVector> {
    let order = by_device_id(devices, selected)?;
    let updates: Vec<DeviceUpdate> = order
        .par_iter()
        .map(|&i| {
            let d = &devices[i];
            let f = spec.batch_loss(w, &d.train)?;
            let local = local_sgd(spec, w, &d.train, sgd, &mut sgd_stream(seed, round, d.device_id))?;
            let mut moved = w - &local;
            if scale_delta_by_l {
                moved *= lipschitz;
            }
            Ok(DeviceUpdate {
                device_id: d.device_id,
                h: lipschitz_estimate(lipschitz, q, f, norm_sq(&moved), eps_floor),
                delta: moved * loss_power(f, q, eps_floor),
            })
        })
        .collect::<Result<_>>()?;
    apply_updates(w, &updates)
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Non-stochastic AFL: every device contributes a full gradient each round.
/// `w <- w - gamma_w sum_k lambda_k grad F_k`, then
/// `lambda <- proj(lambda + gamma_lambda F)` with `F` the losses at the old `w`.
/// Returns the new parameters, the new mixture and the losses at `w`.
pub fn afl_round(
    spec: &ModelSpec,
    devices: &[DeviceData],
    w: &ParamVector,
    lambda: &[f64],
    gamma_w: f64,
    gamma_lambda: f64,
) -> Result<(ParamVector, Vec<f64>, Vec<f64>)> {
    if lambda.len() != devices.len() {
        return Err(Error::Shape(format!(
            "lambda has {} entries for {} devices",
            lambda.len(),
            devices.len()
        )));
    }
    let all: Vec<usize> = (0..devices.len()).collect();
    let order = by_device_id(devices, &all)?;
    let evaluated: Vec<(f64, ParamVector)> = order
        .par_iter()
        .map(|&i| spec.batch_loss_and_gradient(w, &devices[i].train))
        .collect::<Result<_>>()?;

    let mut step = Array1::zeros(w.len());
    let mut losses = vec![0.0; devices.len()];
    for (&i, (f, grad)) in order.iter().zip(&evaluated) {
        step.scaled_add(lambda[i], grad);
        losses[i] = *f;
    }
    let next = w - &(step * gamma_w);
    if !next.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("server update"));
    }
    let ascent: Vec<f64> = lambda
        .iter()
        .zip(&losses)
        .map(|(l, f)| l + gamma_lambda * f)
        .collect();
    Ok((next, project_to_simplex(&ascent), losses))
}
