use std::fs;
use std::path::Path;

use qffl::data::{generate_synthetic, load_csv_manifest, save_csv_manifest, split_dataset, FederatedDataset, Split};
use qffl::harness::{curves_csv, save_run, save_sweep, solver_curves, summary_csv};
use qffl::metrics::{distribution_stats, histogram, histogram_csv, AccuracyDistribution};
use qffl::solvers::{run, Algorithm};

use crate::config::ExperimentConfig;
use crate::report::stats_line;
use crate::CliError;

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

/// The manifest at `data` or a fresh synthetic dataset from the config.
/// Unsplit data is split with `split_seed`.
fn load_dataset(cfg: &ExperimentConfig, data: Option<&Path>, split_seed: u64) -> Result<FederatedDataset, CliError> {
    let ds = match data {
        Some(path) => load_csv_manifest(path)?,
        None => generate_synthetic(&cfg.synthetic)?,
    };
    let unsplit = ds.shards.iter().all(|s| s.val_idx.is_empty() && s.test_idx.is_empty());
    Ok(if unsplit { split_dataset(&ds, split_seed)? } else { ds })
}

pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let ds = split_dataset(&generate_synthetic(&cfg.synthetic)?, cfg.synthetic.seed)?;
    create_dir(out)?;
    let manifest = save_csv_manifest(&ds, out)?;
    println!(
        "devices={} samples={} manifest={}",
        ds.num_devices(),
        ds.total_samples(),
        manifest.display()
    );
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, data: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(cfg, data, cfg.solver.seed)?;
    let result = run(&cfg.solver, &ds)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_run(&result, out)?;
    println!("rounds={} objective={}", result.rounds_executed, result.final_objective());
    let stats = distribution_stats(&result.accuracy_distribution(Split::Test)?)?;
    println!("{}", stats_line("test", &stats));
    Ok(())
}

pub fn sweep(cfg: &ExperimentConfig, data: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let ds = match data {
        Some(path) => load_csv_manifest(path)?,
        None => generate_synthetic(&cfg.synthetic)?,
    };
    let report = qffl::harness::sweep(&cfg.sweep_spec(), &ds)?;
    create_dir(out)?;
    save_sweep(&report, &out.join("sweep.json"))?;
    write(&out.join("summary_test.csv"), &summary_csv(&report.per_q, Split::Test))?;
    write(&out.join("summary_val.csv"), &summary_csv(&report.per_q, Split::Val))?;

    let first_seed = report.runs.iter().map(|r| r.seed).min().expect("non-empty sweep");
    for r in report.runs.iter().filter(|r| r.seed == first_seed) {
        let dist = AccuracyDistribution::from_optional(&r.device_ids, &r.per_device_test_acc, &r.test_counts)?;
        let counts = histogram(&dist, cfg.sweep.histogram_bins);
        write(&out.join(format!("histogram_q{}.csv", r.q)), &histogram_csv(&counts))?;
    }

    for s in &report.per_q {
        println!("q={} test {}", s.q, s.test.csv_fields());
    }
    if let Some(ds) = &report.device_specific {
        println!("device-specific test {}", ds.test.csv_fields());
    }
    println!("selected_q={}", report.selected_q);
    Ok(())
}

pub fn efficiency(cfg: &ExperimentConfig, data: Option<&Path>, out: &Path, label: &str) -> Result<(), CliError> {
    let ds = load_dataset(cfg, data, cfg.solver.seed)?;
    let curves = solver_curves(
        label,
        &ds,
        &cfg.solver,
        &[Algorithm::Qfedavg, Algorithm::Qfedsgd],
        cfg.solver.max_rounds,
    )?;
    write(out, &curves_csv(&curves))?;
    for c in &curves {
        println!(
            "{} q={} initial={} final={}",
            c.algorithm,
            c.q,
            c.objectives[0],
            c.objectives.last().expect("initial objective")
        );
    }
    Ok(())
}
