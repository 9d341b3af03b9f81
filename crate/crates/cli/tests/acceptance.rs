//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Oracles (loss formulas, finite differences, second derivatives, federated
//! gradient descent, hand statistics) are written here independently of the
//! library code they check.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use qffl::data::{
    generate_synthetic, load_csv_manifest, save_csv_manifest, split_dataset, FederatedDataset, SyntheticMode,
    SyntheticSpec,
};
use qffl::harness::{
    estimate_lipschitz, load_sweep, save_sweep, solver_curves, curves_csv, sweep, LProbe, SweepReport, SweepSpec,
};
use qffl::metrics::{aggregate_over_seeds, distribution_stats, histogram, AccuracyDistribution};
use qffl::models::{gradient, loss, ModelSpec};
use qffl::objective::{lipschitz_estimate, qffl_value, DEFAULT_EPS_FLOOR};
use qffl::rngdet::SeededStream;
use qffl::solvers::{Algorithm, SolverConfig, Trainer};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- oracles

fn oracle_softmax_loss(c: usize, d: usize, w: &[f64], x: &Array2<f64>, y: &[i64]) -> f64 {
    let mut total = 0.0;
    for (i, &label) in y.iter().enumerate() {
        let scores: Vec<f64> = (0..c)
            .map(|k| w[c * d + k] + (0..d).map(|j| w[k * d + j] * x[[i, j]]).sum::<f64>())
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        total += lse - scores[label as usize];
    }
    total / y.len() as f64
}

fn oracle_svm_margins(d: usize, w: &[f64], x: &Array2<f64>, y: &[i64]) -> Vec<f64> {
    y.iter()
        .enumerate()
        .map(|(i, &label)| label as f64 * (w[d] + (0..d).map(|j| w[j] * x[[i, j]]).sum::<f64>()))
        .collect()
}

fn oracle_svm_loss(d: usize, ridge: f64, w: &[f64], x: &Array2<f64>, y: &[i64]) -> f64 {
    let m = oracle_svm_margins(d, w, x, y);
    m.iter().map(|m| (1.0 - m).max(0.0)).sum::<f64>() / y.len() as f64
        + 0.5 * ridge * w[..d].iter().map(|v| v * v).sum::<f64>()
}

fn central_difference(f: impl Fn(&[f64]) -> f64, w: &[f64], h: f64) -> Vec<f64> {
    let mut probe = w.to_vec();
    (0..w.len())
        .map(|i| {
            probe[i] = w[i] + h;
            let up = f(&probe);
            probe[i] = w[i] - h;
            let down = f(&probe);
            probe[i] = w[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_linf(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    diff / scale
}

fn random_matrix(s: &mut SeededStream, n: usize, d: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| scale * s.gaussian())
}

// ---------------------------------------------------------------- criteria

/// Analytic gradients against central differences of an independent loss.
fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let (c, d) = (4, 6);
    let softmax = ModelSpec::Softmax { num_classes: c, feature_dim: d };
    let mut s = SeededStream::new(11, "acceptance:gradient:softmax");
    for _ in 0..100 {
        let n = 1 + s.below(12);
        let x = random_matrix(&mut s, n, d, 1.0);
        let y: Vec<i64> = (0..n).map(|_| s.below(c) as i64).collect();
        let w: Vec<f64> = (0..softmax.num_params()).map(|_| s.gaussian()).collect();
        let lib = loss(&softmax, &Array1::from(w.clone()), x.view(), &y).map_err(|e| e.to_string())?;
        let oracle = oracle_softmax_loss(c, d, &w, &x, &y);
        check((lib - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), || {
            format!("softmax loss {lib} vs oracle {oracle}")
        })?;
        let g = gradient(&softmax, &Array1::from(w.clone()), x.view(), &y).map_err(|e| e.to_string())?;
        let fd = central_difference(|p| oracle_softmax_loss(c, d, p, &x, &y), &w, h);
        worst = worst.max(rel_linf(g.as_slice().unwrap(), &fd));
    }

    let mut s = SeededStream::new(12, "acceptance:gradient:svm");
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < 100 {
        attempts += 1;
        check(attempts < 10_000, || "could not draw kink-free SVM instances".into())?;
        let ridge = if accepted % 2 == 0 { 0.0 } else { 0.3 };
        let svm = ModelSpec::Svm { feature_dim: d, ridge };
        let n = 1 + s.below(12);
        let x = random_matrix(&mut s, n, d, 1.0);
        let y: Vec<i64> = (0..n).map(|_| if s.below(2) == 0 { -1 } else { 1 }).collect();
        let w: Vec<f64> = (0..svm.num_params()).map(|_| 0.5 * s.gaussian()).collect();
        if oracle_svm_margins(d, &w, &x, &y).iter().any(|m| (m - 1.0).abs() <= 1e-3) {
            continue;
        }
        accepted += 1;
        let lib = loss(&svm, &Array1::from(w.clone()), x.view(), &y).map_err(|e| e.to_string())?;
        let oracle = oracle_svm_loss(d, ridge, &w, &x, &y);
        check((lib - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), || {
            format!("svm loss {lib} vs oracle {oracle}")
        })?;
        let g = gradient(&svm, &Array1::from(w.clone()), x.view(), &y).map_err(|e| e.to_string())?;
        let fd = central_difference(|p| oracle_svm_loss(d, ridge, p, &x, &y), &w, h);
        worst = worst.max(rel_linf(g.as_slice().unwrap(), &fd));
    }
    check(worst < 1e-6, || format!("max relative L-inf error {worst:.3e}"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("200 instances, max relative error {worst:.2e}"))
}

/// The curvature bound against the exact second derivative of
/// `(a w^2 / 2)^{q+1} / (q + 1)`, which is `(a/2)^{q+1} 2 (2q + 1) w^{2q}`.
fn lipschitz_bound() -> Outcome {
    let start = Instant::now();
    let mut worst_rel: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    for a in [0.5, 1.0, 2.0] {
        for q in [0.5, 1.0, 2.0, 5.0] {
            for i in 0..50 {
                let mag = 0.05 + 2.95 * i as f64 / 49.0;
                let w: f64 = if i % 2 == 0 { mag } else { -mag };
                let f = 0.5 * a * w * w;
                let grad_sq = (a * w) * (a * w);
                let estimate = lipschitz_estimate(a, q, f, grad_sq, DEFAULT_EPS_FLOOR);
                let exact = (a / 2.0).powf(q + 1.0) * 2.0 * (2.0 * q + 1.0) * w.abs().powf(2.0 * q);
                check(exact <= estimate * (1.0 + 1e-9), || {
                    format!("a={a} q={q} w={w}: second derivative {exact} exceeds bound {estimate}")
                })?;
                worst_rel = worst_rel.max((estimate - exact).abs() / exact);

                // second oracle: central second difference of the objective itself
                let big_f = |v: f64| (0.5 * a * v * v).powf(q + 1.0) / (q + 1.0);
                let hh = 1e-4 * w.abs().max(1e-3);
                let fd = (big_f(w + hh) - 2.0 * big_f(w) + big_f(w - hh)) / (hh * hh);
                worst_fd = worst_fd.max((fd - exact).abs() / exact);
            }
        }
    }
    check(worst_rel <= 1e-9, || format!("1-D equality off by relative {worst_rel:.3e}"))?;
    check(worst_fd <= 1e-4, || format!("finite-difference oracle disagrees by {worst_fd:.3e}"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("600 points, max relative gap {worst_rel:.2e} (finite-difference oracle {worst_fd:.1e})"))
}

fn reduction_dataset() -> Result<FederatedDataset, String> {
    let spec = SyntheticSpec { num_devices: 12, size_min: 20, size_max: 150, seed: 21, ..Default::default() };
    let raw = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    split_dataset(&raw, 21).map_err(|e| e.to_string())
}

/// q = 0 reductions, compared bit for bit.
fn reduction_identities() -> Outcome {
    let start = Instant::now();

    // (a) the objective at q = 0 is the weighted mean loss
    let mut s = SeededStream::new(31, "acceptance:reduction:objective");
    for _ in 0..1000 {
        let m = 1 + s.below(50);
        let raw: Vec<f64> = (0..m).map(|_| s.uniform01()).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let f: Vec<f64> = (0..m).map(|_| 5.0 * s.uniform01()).collect();
        let oracle = p.iter().zip(&f).fold(0.0, |acc, (pk, fk)| acc + pk * fk);
        let lib = qffl_value(0.0, &p, &f).map_err(|e| e.to_string())?;
        check(lib.to_bits() == oracle.to_bits(), || format!("qffl_value(0) = {lib}, weighted mean = {oracle}"))?;
    }

    let ds = reduction_dataset()?;
    // K L = 64, a power of two, so 1/(K L) scaling is exact
    let (k, l, rounds) = (4usize, 16.0, 25usize);

    // (b) q-FedSGD at q = 0 against federated gradient descent with step 1/L
    let cfg = SolverConfig {
        algorithm: Algorithm::Qfedsgd,
        q: 0.0,
        lipschitz: l,
        devices_per_round: k,
        max_rounds: rounds,
        patience: 0,
        seed: 5,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&cfg, &ds).map_err(|e| e.to_string())?;
    let spec = *trainer.spec();
    let mut w = spec.zeros();
    for t in 0..rounds {
        let record = trainer.step().map_err(|e| e.to_string())?;
        let mut sum = Array1::<f64>::zeros(w.len());
        for id in &record.selected {
            let shard = ds.shards.iter().find(|sh| sh.device_id == *id).unwrap();
            let batch = shard.batch(qffl::data::Split::Train);
            sum += &gradient(&spec, &w, batch.features.view(), &batch.labels).map_err(|e| e.to_string())?;
        }
        w = &w - &(sum * (1.0 / (k as f64 * l)));
        check(w.iter().zip(record.params.iter()).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            format!("q-FedSGD departs from gradient descent at round {t}")
        })?;
    }

    // (c) q-FedAvg at q = 0 with L-scaled deltas against FedAvg
    let base = SolverConfig {
        q: 0.0,
        lipschitz: l,
        scale_delta_by_l: true,
        devices_per_round: k,
        max_rounds: rounds,
        patience: 0,
        eta: 0.05,
        batch_size: 7,
        seed: 6,
        ..Default::default()
    };
    let mut qfedavg = Trainer::new(&SolverConfig { algorithm: Algorithm::Qfedavg, ..base.clone() }, &ds)
        .map_err(|e| e.to_string())?;
    let mut fedavg =
        Trainer::new(&SolverConfig { algorithm: Algorithm::Fedavg, ..base }, &ds).map_err(|e| e.to_string())?;
    let mut worst_mean_gap: f64 = 0.0;
    for t in 0..rounds {
        let before = fedavg.params().clone();
        let a = qfedavg.step().map_err(|e| e.to_string())?;
        let b = fedavg.step().map_err(|e| e.to_string())?;
        check(a.selected == b.selected, || format!("sampling differs at round {t}"))?;
        check(a.params.iter().zip(b.params.iter()).all(|(x, y)| x.to_bits() == y.to_bits()), || {
            format!("q-FedAvg departs from FedAvg at round {t}")
        })?;
        // FedAvg itself against the plain average of local models
        let mut mean = Array1::<f64>::zeros(before.len());
        for id in &b.selected {
            let pos = fedavg.devices().iter().position(|d| d.device_id == *id).unwrap();
            let dev = &fedavg.devices()[pos];
            let mut stream = SeededStream::new(6, format!("sgd:round:{t}:device:{id}"));
            let local = qffl::solvers::local_sgd(&spec, &before, &dev.train, &fedavg_sgd(), &mut stream)
                .map_err(|e| e.to_string())?;
            mean += &local;
        }
        mean /= k as f64;
        let gap = mean.iter().zip(b.params.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst_mean_gap = worst_mean_gap.max(gap);
    }
    check(worst_mean_gap < 1e-12, || format!("FedAvg differs from the local-model average by {worst_mean_gap:.2e}"))?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("1000 objective draws, {rounds} rounds each for q-FedSGD and q-FedAvg, all bitwise equal"))
}

fn fedavg_sgd() -> qffl::solvers::LocalSgd {
    qffl::solvers::LocalSgd { epochs: 1, eta: 0.05, batch_size: 7 }
}

/// Settings of the desk-scale fairness reproduction.
fn fairness_sweep_spec() -> SweepSpec {
    SweepSpec {
        base: SolverConfig {
            algorithm: Algorithm::Qfedavg,
            eta: 0.1,
            lipschitz: 1.0,
            scale_delta_by_l: false,
            batch_size: 10,
            devices_per_round: 10,
            max_rounds: 3000,
            patience: 0,
            ..Default::default()
        },
        q_grid: vec![0.0, 1.0, 10.0],
        seeds: vec![0, 1, 2, 3, 4],
        device_specific: true,
        ..Default::default()
    }
}

fn fairness_report() -> Result<(SweepReport, Duration), String> {
    let start = Instant::now();
    let ds = generate_synthetic(&SyntheticSpec::default()).map_err(|e| e.to_string())?;
    let report = sweep(&fairness_sweep_spec(), &ds).map_err(|e| e.to_string())?;
    Ok((report, start.elapsed()))
}

fn fairness_reproduction(report: &SweepReport, elapsed: Duration) -> Outcome {
    let q0 = &report.q_summary(0.0).ok_or("q=0 missing")?.test;
    let q1 = &report.q_summary(1.0).ok_or("q=1 missing")?.test;
    let reduction = 1.0 - q1.variance.mean / q0.variance.mean;
    let drop = q0.mean_data_weighted.mean - q1.mean_data_weighted.mean;
    let detail = format!(
        "variance {:.1} -> {:.1} ({:.1}% reduction), average {:.2} -> {:.2}, worst 10% {:.2} -> {:.2}, {elapsed:.0?}",
        q0.variance.mean,
        q1.variance.mean,
        100.0 * reduction,
        q0.mean_data_weighted.mean,
        q1.mean_data_weighted.mean,
        q0.worst10.mean,
        q1.worst10.mean
    );
    check(reduction >= 0.20, || format!("variance reduction below 20%: {detail}"))?;
    check(drop <= 3.0, || format!("average accuracy dropped more than 3 points: {detail}"))?;
    check(q1.worst10.mean > q0.worst10.mean, || format!("worst 10% did not improve: {detail}"))?;
    Ok(detail)
}

fn worst_device_mean(report: &SweepReport, q: f64) -> f64 {
    let worst: Vec<f64> = report
        .runs_for(q)
        .map(|r| r.per_device_test_acc.iter().flatten().cloned().fold(f64::INFINITY, f64::min))
        .collect();
    worst.iter().sum::<f64>() / worst.len() as f64
}

fn minimax_behaviour(report: &SweepReport) -> Outcome {
    let w0 = worst_device_mean(report, 0.0);
    let w10 = worst_device_mean(report, 10.0);
    let detail = format!("mean worst-device accuracy q=0 {:.2}%, q=10 {:.2}%", 100.0 * w0, 100.0 * w10);
    check(w10 >= w0, || detail.clone())?;
    Ok(detail)
}

/// λ stays on the simplex and the worst device's loss goes down.
fn afl_sanity() -> Outcome {
    let start = Instant::now();
    let spec = SyntheticSpec { num_devices: 3, seed: 41, ..Default::default() };
    let ds = split_dataset(&generate_synthetic(&spec).map_err(|e| e.to_string())?, 41).map_err(|e| e.to_string())?;
    let cfg = SolverConfig {
        algorithm: Algorithm::Afl,
        afl_gamma_w: 0.1,
        afl_gamma_lambda: 0.1,
        max_rounds: 200,
        patience: 0,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&cfg, &ds).map_err(|e| e.to_string())?;
    let initial = trainer.train_losses().map_err(|e| e.to_string())?;
    for t in 0..cfg.max_rounds {
        let record = trainer.step().map_err(|e| e.to_string())?;
        let lambda = record.lambda.ok_or("AFL round without λ")?;
        check(lambda.iter().all(|&l| l >= 0.0), || format!("negative λ at round {t}: {lambda:?}"))?;
        let total: f64 = lambda.iter().sum();
        check((total - 1.0).abs() <= 4.0 * f64::EPSILON, || format!("λ sums to {total:e} at round {t}"))?;
    }
    let last = trainer.train_losses().map_err(|e| e.to_string())?;
    let worst_initial = initial.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let worst_final = last.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    check(worst_final < worst_initial, || format!("worst loss {worst_initial} -> {worst_final}"))?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("200 rounds, worst training loss {worst_initial:.4} -> {worst_final:.4}"))
}

fn out_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Rounds-to-objective curves on the three data regimes.
fn efficiency_curves() -> Outcome {
    let rounds = 100;
    let mut curves = Vec::new();
    let mut notes = Vec::new();
    for (label, mode) in [("noniid", SyntheticMode::Noniid), ("hybrid", SyntheticMode::Hybrid), ("iid", SyntheticMode::Iid)] {
        let spec = SyntheticSpec { mode, seed: 51, ..Default::default() };
        let ds = split_dataset(&generate_synthetic(&spec).map_err(|e| e.to_string())?, 51).map_err(|e| e.to_string())?;
        let base = SolverConfig { q: 1.0, scale_delta_by_l: true, seed: 51, ..Default::default() };
        let est = estimate_lipschitz(&ds, &base, &LProbe::default()).map_err(|e| e.to_string())?;
        let base = SolverConfig { lipschitz: est.lipschitz, ..base };
        let pair = solver_curves(label, &ds, &base, &[Algorithm::Qfedavg, Algorithm::Qfedsgd], rounds)
            .map_err(|e| e.to_string())?;
        // rounds to reach the higher of the two final objectives
        let target = pair.iter().map(|c| *c.objectives.last().unwrap()).fold(f64::NEG_INFINITY, f64::max);
        let reach: Vec<String> = pair
            .iter()
            .map(|c| format!("{}={:?}", c.algorithm, c.rounds_to_target(target)))
            .collect();
        notes.push(format!("{label} (L={}) {}", est.lipschitz, reach.join(" ")));
        curves.extend(pair);
    }
    let csv = curves_csv(&curves);
    let path = out_dir().join("efficiency.csv");
    fs::write(&path, &csv).map_err(|e| e.to_string())?;

    // re-read the emitted CSV and check its shape
    let mut lines = csv.lines();
    check(lines.next() == Some("dataset,algorithm,q,round,objective"), || "bad header".into())?;
    let mut last: Option<(String, String, usize)> = None;
    let mut count = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        check(cols.len() == 5, || format!("bad row {line}"))?;
        let round: usize = cols[3].parse().map_err(|_| format!("bad round in {line}"))?;
        let objective: f64 = cols[4].parse().map_err(|_| format!("bad objective in {line}"))?;
        check(objective.is_finite(), || format!("non-finite objective in {line}"))?;
        check(cols[2] == "1", || format!("q differs in {line}"))?;
        let key = (cols[0].to_string(), cols[1].to_string());
        match &last {
            Some((d, a, r)) if (d, a) == (&key.0, &key.1) => {
                check(round == r + 1, || format!("round index not consecutive at {line}"))?
            }
            _ => check(round == 0, || format!("curve does not start at round 0: {line}"))?,
        }
        last = Some((key.0, key.1, round));
        count += 1;
    }
    check(count == 6 * (rounds + 1), || format!("expected {} rows, found {count}", 6 * (rounds + 1)))?;
    Ok(format!("{} | csv {}", notes.join("; "), path.display()))
}

/// The per-device composite never loses to a single q on validation.
fn device_specific_dominance(report: &SweepReport) -> Outcome {
    let ds = report.device_specific.as_ref().ok_or("sweep ran without device-specific selection")?;
    let mut compared = 0;
    for sel in &ds.per_seed {
        for run in report.runs.iter().filter(|r| r.seed == sel.seed) {
            for (i, fixed) in run.per_device_val_acc.iter().enumerate() {
                let composite = sel.result.per_device_val_acc[i];
                match (composite, fixed) {
                    (Some(c), Some(f)) => {
                        check(c >= *f, || {
                            format!("seed {} device {}: composite {c} < q={} model {f}", sel.seed, run.device_ids[i], run.q)
                        })?;
                        compared += 1;
                    }
                    (None, None) => {}
                    _ => return Err(format!("validation coverage differs for device {}", run.device_ids[i])),
                }
            }
        }
    }
    Ok(format!(
        "{compared} device/model comparisons, composite test {}",
        ds.test.csv_fields()
    ))
}

fn qffl_bin(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_qffl"))
        .args(args)
        .env_remove("LOG_LEVEL")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("qffl {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, files: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, files);
            } else {
                files.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    let mut files = Vec::new();
    walk(root, root, &mut files);
    files.sort();
    files
}

/// Every command twice with the same config and seed.
fn determinism() -> Outcome {
    let root = out_dir().join("determinism");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).map_err(|e| e.to_string())?;
    let config = root.join("exp.toml");
    fs::write(
        &config,
        "[synthetic]\nnum_devices = 10\nsize_max = 200\n\n[solver]\nq = 1.0\nmax_rounds = 20\ndevices_per_round = 5\nscale_delta_by_l = true\n\n[sweep]\nq_grid = [0.0, 1.0, 5.0]\nseeds = [0, 1]\n",
    )
    .map_err(|e| e.to_string())?;
    let cfg = config.to_str().unwrap();
    let mut runs = Vec::new();
    for attempt in ["a", "b"] {
        let dir = root.join(attempt);
        let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
        qffl_bin(&["generate", "--config", cfg, "--seed", "3", "--out", &p("data")])?;
        let manifest = p("data/manifest.json");
        qffl_bin(&["train", "--config", cfg, "--seed", "3", "--data", &manifest, "--out", &p("run.json")])?;
        qffl_bin(&["sweep", "--config", cfg, "--seed", "3", "--data", &manifest, "--out", &p("sweep")])?;
        qffl_bin(&["efficiency", "--config", cfg, "--seed", "3", "--data", &manifest, "--out", &p("curves.csv")])?;
        qffl_bin(&["report", &p("run.json"), &p("sweep/sweep.json"), "--out", &p("report.csv"), "--histogram", &p("hist.csv")])?;
        runs.push(tree(&dir));
    }
    for expected in ["data/manifest.json", "run.json", "sweep/sweep.json", "sweep/summary_test.csv", "curves.csv", "report.csv", "hist.csv"] {
        check(runs[0].iter().any(|(p, _)| p == Path::new(expected)), || format!("{expected} not produced"))?;
    }
    for ((pa, a), (pb, b)) in runs[0].iter().zip(&runs[1]) {
        check(pa == pb && a == b, || format!("{} differs between reruns", pa.display()))?;
    }
    check(runs[0].len() == runs[1].len(), || "file sets differ".into())?;
    Ok(format!("{} files byte-identical across reruns", runs[0].len()))
}

fn expect_err<T>(r: qffl::Result<T>, needle: &str, what: &str) -> Result<String, String> {
    match r {
        Ok(_) => Err(format!("{what}: accepted malformed input")),
        Err(e) => {
            let msg = e.to_string();
            check(msg.contains(needle), || format!("{what}: message '{msg}' lacks '{needle}'"))?;
            Ok(msg)
        }
    }
}

/// save -> load -> save is byte-identical; malformed input is reported.
fn format_round_trips(report: &SweepReport) -> Outcome {
    let root = out_dir().join("round_trip");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).map_err(|e| e.to_string())?;

    let spec = SyntheticSpec { num_devices: 7, mode: SyntheticMode::Hybrid, seed: 61, ..Default::default() };
    let ds = split_dataset(&generate_synthetic(&spec).map_err(|e| e.to_string())?, 61).map_err(|e| e.to_string())?;
    let first = root.join("first");
    let second = root.join("second");
    let manifest = save_csv_manifest(&ds, &first).map_err(|e| e.to_string())?;
    let loaded = load_csv_manifest(&manifest).map_err(|e| e.to_string())?;
    for (a, b) in ds.shards.iter().zip(&loaded.shards) {
        check(a.features.iter().zip(b.features.iter()).all(|(x, y)| x.to_bits() == y.to_bits()), || {
            format!("device {} features changed", a.device_id)
        })?;
        check(a.labels == b.labels && a.test_idx == b.test_idx && a.val_idx == b.val_idx, || {
            format!("device {} labels or splits changed", a.device_id)
        })?;
    }
    save_csv_manifest(&loaded, &second).map_err(|e| e.to_string())?;
    check(tree(&first) == tree(&second), || "manifest directory changed on re-save".into())?;

    let sweep_a = root.join("sweep_a.json");
    let sweep_b = root.join("sweep_b.json");
    save_sweep(report, &sweep_a).map_err(|e| e.to_string())?;
    let reloaded = load_sweep(&sweep_a).map_err(|e| e.to_string())?;
    save_sweep(&reloaded, &sweep_b).map_err(|e| e.to_string())?;
    check(fs::read(&sweep_a).unwrap() == fs::read(&sweep_b).unwrap(), || "sweep report changed on re-save".into())?;

    // malformed inputs
    let text = fs::read_to_string(&manifest).unwrap();
    let cut = root.join("truncated.json");
    fs::write(&cut, &text[..text.len() / 2]).unwrap();
    expect_err(load_csv_manifest(&cut), "byte", "truncated manifest")?;

    let bad = root.join("bad_label");
    fs::create_dir_all(&bad).unwrap();
    fs::write(bad.join("manifest.json"), r#"{"task":"softmax","feature_dim":2,"num_classes":10,"devices":[{"id":0,"file":"d.csv"}]}"#).unwrap();
    fs::write(bad.join("d.csv"), "f0,f1,label\n0.5,1.5,3\n0.1,0.2,10\n").unwrap();
    expect_err(load_csv_manifest(&bad.join("manifest.json")), "row 2", "out-of-range label")?;

    fs::write(bad.join("d.csv"), "f0,label\n0.5,3\n").unwrap();
    expect_err(load_csv_manifest(&bad.join("manifest.json")), "d.csv", "dimension mismatch")?;

    let sweep_text = fs::read_to_string(&sweep_a).unwrap();
    let cut_sweep = root.join("truncated_sweep.json");
    fs::write(&cut_sweep, &sweep_text[..sweep_text.len() - 10]).unwrap();
    expect_err(load_sweep(&cut_sweep), "line", "truncated sweep report")?;
    Ok("manifest and sweep report stable across save/load/save; 4 malformed inputs rejected".into())
}

/// Statistics against hand values and independent arithmetic, to 1e-9.
fn metrics_suite() -> Outcome {
    let dist = |accs: &[f64]| {
        let n = accs.len();
        AccuracyDistribution::new(accs.to_vec(), vec![1; n], (0..n).collect()).map_err(|e| e.to_string())
    };
    let constant = distribution_stats(&dist(&[0.7; 9])?).map_err(|e| e.to_string())?;
    check(constant.variance.abs() <= 1e-9, || format!("constant variance {}", constant.variance))?;
    let three = distribution_stats(&dist(&[0.6, 0.8, 1.0])?).map_err(|e| e.to_string())?;
    // percentages 60, 80, 100: squared deviations 400, 0, 400 over 3
    check((three.variance - 800.0 / 3.0).abs() <= 1e-9, || format!("variance {}", three.variance))?;
    check((three.mean_device - 80.0).abs() <= 1e-9, || format!("mean {}", three.mean_device))?;
    check((three.worst10 - 60.0).abs() <= 1e-9 && (three.best10 - 100.0).abs() <= 1e-9, || {
        "cohort means".into()
    })?;

    let mut s = SeededStream::new(71, "acceptance:metrics");
    for _ in 0..200 {
        let n = 1 + s.below(60);
        let accs: Vec<f64> = (0..n).map(|_| s.uniform01()).collect();
        let bins = 1 + s.below(20);
        let counts = histogram(&dist(&accs)?, bins);
        check(counts.len() == bins && counts.iter().sum::<usize>() == n, || "histogram lost devices".into())?;
    }
    let edge = histogram(&dist(&[0.0, 1.0, 1.0])?, 4);
    check(edge == vec![1, 0, 0, 2], || format!("edge bins {edge:?}"))?;

    let mut runs = Vec::new();
    for _ in 0..5 {
        let accs: Vec<f64> = (0..20).map(|_| s.uniform01()).collect();
        runs.push(distribution_stats(&dist(&accs)?).map_err(|e| e.to_string())?);
    }
    let agg = aggregate_over_seeds(&runs).map_err(|e| e.to_string())?;
    let v: Vec<f64> = runs.iter().map(|r| r.variance).collect();
    let mean = v.iter().sum::<f64>() / 5.0;
    let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0).sqrt();
    check((agg.variance.mean - mean).abs() <= 1e-9 && (agg.variance.std - std).abs() <= 1e-9, || {
        format!("aggregate {:?} vs {mean} ± {std}", agg.variance)
    })?;
    let single = aggregate_over_seeds(&runs[..1]).map_err(|e| e.to_string())?;
    check(single.worst10.std == 0.0 && single.variance.std == 0.0, || "single run std not zero".into())?;
    Ok("hand cases, 200 histogram conservation draws, aggregation arithmetic".into())
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "gradient correctness", gradient_correctness()));
    results.push((2, "curvature bound", lipschitz_bound()));
    results.push((3, "reduction identities", reduction_identities()));
    match fairness_report() {
        Ok((report, elapsed)) => {
            results.push((4, "fairness reproduction", fairness_reproduction(&report, elapsed)));
            results.push((5, "large-q minimax", minimax_behaviour(&report)));
            results.push((6, "AFL sanity", afl_sanity()));
            results.push((7, "solver efficiency curves", efficiency_curves()));
            results.push((8, "device-specific q", device_specific_dominance(&report)));
            results.push((9, "determinism", determinism()));
            results.push((10, "format round-trips", format_round_trips(&report)));
        }
        Err(e) => {
            for (n, name) in [(4, "fairness reproduction"), (5, "large-q minimax"), (8, "device-specific q"), (10, "format round-trips")] {
                results.push((n, name, Err(format!("sweep failed: {e}"))));
            }
            results.push((6, "AFL sanity", afl_sanity()));
            results.push((7, "solver efficiency curves", efficiency_curves()));
            results.push((9, "determinism", determinism()));
        }
    }
    results.push((11, "metrics suite", metrics_suite()));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
