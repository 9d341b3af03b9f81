//! `report`: mean±std tables over run or sweep reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use qffl::data::Split;
use qffl::harness::{load_run, load_sweep, SweepReport};
use qffl::metrics::{
    aggregate_over_seeds, distribution_stats, histogram, histogram_csv, AccuracyDistribution, AggregatedStats,
    DistributionStats,
};
use qffl::solvers::{DatasetSummary, RunResult};

use crate::CliError;

pub fn stats_line(label: &str, s: &DistributionStats) -> String {
    format!(
        "{label} average_data={:.2} average_device={:.2} worst10={:.2} best10={:.2} variance={:.2}",
        s.mean_data_weighted, s.mean_device, s.worst10, s.best10, s.variance
    )
}

enum Input {
    Run(RunResult),
    Sweep(SweepReport),
}

fn load(path: &Path) -> Result<Input, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{}: not a JSON report: {e}", path.display())))?;
    if value.get("runs").is_some() && value.get("per_q").is_some() {
        Ok(Input::Sweep(load_sweep(path)?))
    } else {
        Ok(Input::Run(load_run(path)?))
    }
}

struct Row {
    label: String,
    stats: AggregatedStats,
}

/// Console columns; the device-weighted average is kept in the CSV only.
fn print_table(rows: &[Row]) {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max("objective".len());
    println!(
        "{:<width$}  {:>5}  {:>14}  {:>14}  {:>14}  {:>16}",
        "objective", "runs", "average", "worst 10%", "best 10%", "variance"
    );
    for r in rows {
        let s = &r.stats;
        println!(
            "{:<width$}  {:>5}  {:>14}  {:>14}  {:>14}  {:>16}",
            r.label,
            s.runs,
            s.mean_data_weighted.to_string(),
            s.worst10.to_string(),
            s.best10.to_string(),
            s.variance.to_string()
        );
    }
}

fn table_csv(rows: &[Row]) -> String {
    let mut out = format!("objective,runs,{}\n", AggregatedStats::CSV_HEADER);
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.label, r.stats.runs, r.stats.csv_fields()));
    }
    out
}

fn check_same(first: &(DatasetSummary, Vec<usize>), other: &(DatasetSummary, Vec<usize>), path: &Path) -> Result<(), CliError> {
    if first.0 != other.0 {
        return Err(CliError::Runtime(format!(
            "{}: trained on a different dataset than the first input",
            path.display()
        )));
    }
    if first.1 != other.1 {
        return Err(CliError::Runtime(format!(
            "{}: device set differs from the first input",
            path.display()
        )));
    }
    Ok(())
}

pub fn report(files: &[PathBuf], out: Option<&Path>, histogram_path: Option<&Path>, bins: usize) -> Result<(), CliError> {
    if bins == 0 {
        return Err(CliError::Usage("--bins must be >= 1".into()));
    }
    let inputs: Vec<Input> = files.iter().map(|f| load(f)).collect::<Result<_, _>>()?;

    let mut reference: Option<(DatasetSummary, Vec<usize>)> = None;
    // per-device test distributions pooled over every run
    let mut pooled: Vec<AccuracyDistribution> = Vec::new();
    // (algorithm, q) -> per-run test stats; BTreeMap keeps the row order stable
    let mut groups: BTreeMap<(String, u64), Vec<DistributionStats>> = BTreeMap::new();
    let mut sweep_rows: Vec<Row> = Vec::new();

    for (input, path) in inputs.iter().zip(files) {
        match input {
            Input::Run(r) => {
                let key = (r.dataset.clone(), r.device_ids.clone());
                match &reference {
                    Some(first) => check_same(first, &key, path)?,
                    None => reference = Some(key),
                }
                let dist = r.accuracy_distribution(Split::Test)?;
                let stats = distribution_stats(&dist)?;
                groups
                    .entry((r.config.algorithm.to_string(), r.config.q.to_bits()))
                    .or_default()
                    .push(stats);
                pooled.push(dist);
            }
            Input::Sweep(s) => {
                for run in &s.runs {
                    let key = (s.dataset.clone(), run.device_ids.clone());
                    match &reference {
                        Some(first) => check_same(first, &key, path)?,
                        None => reference = Some(key),
                    }
                    pooled.push(AccuracyDistribution::from_optional(
                        &run.device_ids,
                        &run.per_device_test_acc,
                        &run.test_counts,
                    )?);
                }
                for q in &s.per_q {
                    sweep_rows.push(Row {
                        label: format!("{} q={}", s.spec.base.algorithm, q.q),
                        stats: q.test.clone(),
                    });
                }
                if let Some(d) = &s.device_specific {
                    sweep_rows.push(Row {
                        label: format!("{} device-specific", s.spec.base.algorithm),
                        stats: d.test.clone(),
                    });
                }
            }
        }
    }

    let mut rows: Vec<Row> = Vec::new();
    for ((algorithm, q_bits), stats) in &groups {
        rows.push(Row {
            label: format!("{algorithm} q={}", f64::from_bits(*q_bits)),
            stats: aggregate_over_seeds(stats)?,
        });
    }
    rows.extend(sweep_rows);

    print_table(&rows);
    if let Some(path) = out {
        fs::write(path, table_csv(&rows)).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    if let Some(path) = histogram_path {
        let mut counts = vec![0usize; bins];
        for dist in &pooled {
            for (c, n) in counts.iter_mut().zip(histogram(dist, bins)) {
                *c += n;
            }
        }
        fs::write(path, histogram_csv(&counts)).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
