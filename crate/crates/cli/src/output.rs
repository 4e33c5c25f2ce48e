//! CSV traces and their JSON metadata.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use qcorr_core::thermo::trajectory_snapshots;
use qcorr_core::{DensityOperator, PairConfig, SedTrace};
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};

pub const CSV_HEADER: &str = "t,E_A,E_B,SED,Q_A,Q_B,concurrence,mutual_info,Sigma0,Sigma,V_expect";

/// One sampled time of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Row {
    pub t: f64,
    pub e_a: f64,
    pub e_b: f64,
    pub sed: f64,
    pub q_a: f64,
    pub q_b: f64,
    pub concurrence: f64,
    pub mutual_info: f64,
    pub sigma0: f64,
    pub sigma: f64,
    pub v_expect: f64,
}

impl Row {
    fn values(&self) -> [f64; 11] {
        [
            self.t,
            self.e_a,
            self.e_b,
            self.sed,
            self.q_a,
            self.q_b,
            self.concurrence,
            self.mutual_info,
            self.sigma0,
            self.sigma,
            self.v_expect,
        ]
    }
}

/// Rows for a sampled trajectory; entropy production is measured from the
/// first sample.
pub fn rows_from(
    config: &PairConfig,
    trace: &SedTrace,
    states: &[DensityOperator],
    heat: &[(f64, f64)],
    v_expect: &[f64],
) -> Result<Vec<Row>> {
    let snaps = trajectory_snapshots(&trace.times, states, heat, config)?;
    Ok(snaps
        .iter()
        .enumerate()
        .map(|(i, s)| Row {
            t: s.t,
            e_a: s.e_a,
            e_b: s.e_b,
            sed: s.sed(),
            q_a: s.q_a,
            q_b: s.q_b,
            concurrence: trace.concurrence[i],
            mutual_info: s.i_ab,
            sigma0: s.sigma0,
            sigma: s.sigma,
            v_expect: v_expect[i],
        })
        .collect())
}

/// 17 significant digits, so values round-trip exactly.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_text(rows: &[Row]) -> String {
    let mut out = String::with_capacity(rows.len() * 11 * 24 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        for (i, v) in row.values().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Write `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_run(dir: &Path, stem: &str, rows: &[Row], metadata: &Value) -> Result<PathBuf> {
    let csv = dir.join(format!("{stem}.csv"));
    write_text(&csv, &csv_text(rows))?;
    let mut meta = metadata.clone();
    if let Value::Object(map) = &mut meta {
        map.insert("csv".into(), Value::String(format!("{stem}.csv")));
        map.insert("columns".into(), Value::String(CSV_HEADER.into()));
        map.insert("rows".into(), Value::from(rows.len()));
    }
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    write_text(&dir.join(format!("{stem}.json")), &(json + "\n"))?;
    Ok(csv)
}
