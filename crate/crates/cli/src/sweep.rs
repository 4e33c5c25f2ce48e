//! Parameter sweeps over any numeric config key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;
use toml::{Table, Value};

use crate::app::run_and_write;
use crate::config::{parse_config, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::experiment::Summary;
use crate::output::{ensure_dir, format_float, write_text};

/// One point of the grid: `(dotted key, value)` in key order.
pub type GridPoint = Vec<(String, f64)>;

/// Cartesian product of the grid, last key varying fastest.
pub fn expand_grid(grid: &BTreeMap<String, Vec<f64>>, max_runs: usize) -> Result<Vec<GridPoint>> {
    if grid.is_empty() {
        return Err(CliError::Config("sweep.grid: no parameters to sweep".into()));
    }
    let mut total: usize = 1;
    for (key, values) in grid {
        if values.is_empty() {
            return Err(CliError::Config(format!("sweep.grid.{key}: empty value list")));
        }
        total = total.saturating_mul(values.len());
    }
    if total > max_runs {
        return Err(CliError::Cap(format!("sweep has {total} runs, sweep.max_runs is {max_runs}")));
    }
    let mut points: Vec<GridPoint> = vec![Vec::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), *v));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| {
        CliError::Config(format!("sweep.grid: invalid key {key:?}"))
    })?;
    let mut cursor = table;
    for part in parts {
        let entry = cursor.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("sweep.grid.{key}: {part} is not a section")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

/// `base` with the grid point applied, checked like a config file.
pub fn apply_point(base: &ExperimentConfig, point: &GridPoint) -> Result<ExperimentConfig> {
    let mut plain = base.clone();
    plain.sweep = None;
    plain.mode = None;
    let mut table: Table = toml::from_str(&plain.to_toml()).expect("own TOML parses");
    for (key, v) in point {
        // integral values stay valid for integer settings such as the depth
        let value = if v.fract() == 0.0 && v.abs() < 9e15 {
            Value::Integer(*v as i64)
        } else {
            Value::Float(*v)
        };
        set_path(&mut table, key, value)?;
    }
    parse_config(&toml::to_string(&table).expect("table serializes")).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("sweep.grid: {msg}")),
        other => other,
    })
}

pub const SUMMARY_TAIL: &str = "Q_B_bar,I0,cop_ratio,Sigma_min,SED_period,Q_B_early";

fn summary_line(index: usize, point: &GridPoint, s: &Summary) -> String {
    let mut line = format!("{index}");
    for (_, v) in point {
        let _ = write!(line, ",{}", format_float(*v));
    }
    for v in [s.q_b_bar, s.i0, s.cop_ratio, s.sigma_min, s.sed_period, s.q_b_early] {
        let _ = write!(line, ",{}", format_float(v));
    }
    line
}

/// Run every grid point on a pool of `jobs` workers and write
/// `summary.csv` plus one trace per run, in grid order.
pub fn run_sweep(config: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<Vec<Summary>> {
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("sweep: section required in sweep mode".into()))?;
    let points = expand_grid(&sweep.grid, sweep.max_runs)?;
    let configs = points.iter().map(|p| apply_point(config, p)).collect::<Result<Vec<_>>>()?;
    ensure_dir(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    let width = (points.len() - 1).to_string().len().max(3);
    let results: Vec<Result<Summary>> = pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let stem = format!("run_{i:0width$}");
                log::info!("sweep {stem}: {:?}", points[i]);
                run_and_write(c, sweep.mode, out_dir, &stem, None).map(|o| o.summary)
            })
            .collect()
    });
    let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut text = String::from("run");
    for key in sweep.grid.keys() {
        text.push(',');
        text.push_str(key);
    }
    text.push(',');
    text.push_str(SUMMARY_TAIL);
    text.push('\n');
    for (i, (p, s)) in points.iter().zip(&summaries).enumerate() {
        text.push_str(&summary_line(i, p, s));
        text.push('\n');
    }
    write_text(&out_dir.join("summary.csv"), &text)?;
    let meta = json!({
        "tool": "qcorr-pump",
        "version": env!("CARGO_PKG_VERSION"),
        "mode": "sweep",
        "run_mode": sweep.mode,
        "grid": sweep.grid,
        "runs": points.len(),
        "base_config_toml": config.to_toml(),
        "columns": format!("run,{},{SUMMARY_TAIL}", sweep.grid.keys().cloned().collect::<Vec<_>>().join(",")),
    });
    write_text(
        &out_dir.join("summary.json"),
        &(serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n"),
    )?;
    Ok(summaries)
}
