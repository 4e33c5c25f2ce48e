//! Glue between parsed arguments, runs and files on disk.

use std::path::Path;

use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Mode};
use crate::error::{CliError, Result};
use crate::experiment::{convergence_ladder, run, run_normal, RunOutput};
use crate::output::{ensure_dir, write_run, write_text};
use crate::presets::{preset_runs, PresetRun};

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub depth: Option<usize>,
    pub matsubara: Option<usize>,
    pub reset_ados: bool,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(l) = self.depth {
            config.hierarchy.depth = l;
        }
        if let Some(k) = self.matsubara {
            config.hierarchy.matsubara = k;
        }
        if self.reset_ados {
            config.hierarchy.reset_ados = true;
        }
    }
}

fn metadata(config: &ExperimentConfig, mode: Mode, preset: Option<&str>, stem: &str) -> Result<Value> {
    let resolved = config.resolved(mode)?;
    let mut meta = json!({
        "tool": "qcorr-pump",
        "version": env!("CARGO_PKG_VERSION"),
        "mode": mode,
        "preset": preset,
        "run": stem,
        "dt": resolved.dt,
        "t_final": resolved.t_final,
        "output_stride": resolved.output_stride,
        "config": resolved,
        "config_toml": resolved.to_toml(),
    });
    if mode != Mode::Closed {
        let options = config.heom_options()?;
        meta["hierarchy"] = json!({
            "depth": options.depth,
            "matsubara": config.hierarchy.matsubara,
            "terminator": options.terminator,
            "reset_ados": config.hierarchy.reset_ados,
            "ado_cap": options.ado_cap,
        });
    }
    Ok(meta)
}

/// Run one configuration and write `<stem>.csv` and `<stem>.json`.
pub fn run_and_write(
    config: &ExperimentConfig,
    mode: Mode,
    out_dir: &Path,
    stem: &str,
    preset: Option<&str>,
) -> Result<RunOutput> {
    let output = run(config, mode)?;
    let mut meta = metadata(config, mode, preset, stem)?;
    meta["summary"] = json!(output.summary);
    meta["details"] = output.details.clone();
    if mode != Mode::Closed {
        meta["convergence"] = convergence_ladder(config)?;
    }
    write_run(out_dir, stem, &output.rows, &meta)?;
    Ok(output)
}

/// Run every member of a preset in order; returns the CSV file names.
pub fn run_preset(name: &str, mode: Option<Mode>, out_dir: &Path, overrides: &Overrides) -> Result<Vec<String>> {
    let runs = preset_runs(name)?;
    if let (Some(m), Some(PresetRun::Single { mode: first, .. })) = (mode, runs.first()) {
        if m != *first {
            return Err(CliError::Config(format!(
                "mode: preset {name} runs in {} mode, not {}",
                first.as_str(),
                m.as_str()
            )));
        }
    }
    ensure_dir(out_dir)?;
    let mut files = Vec::with_capacity(runs.len());
    for r in runs {
        let mut config = r.config().clone();
        overrides.apply(&mut config);
        log::info!("preset {name}: {}", r.stem());
        match &r {
            PresetRun::Single { stem, mode, .. } => {
                run_and_write(&config, *mode, out_dir, stem, Some(name))?;
            }
            PresetRun::Normal { stem, duration, .. } => {
                let output = run_normal(&config, *duration)?;
                let mut meta = metadata(&config, Mode::Open, Some(name), stem)?;
                meta["t_final"] = json!(duration);
                meta["summary"] = json!(output.summary);
                meta["details"] = output.details;
                meta["convergence"] = Value::Null;
                write_run(out_dir, stem, &output.rows, &meta)?;
            }
        }
        files.push(format!("{}.csv", r.stem()));
    }
    let index = json!({ "preset": name, "files": files });
    write_text(
        &out_dir.join(format!("{name}.json")),
        &(serde_json::to_string_pretty(&index).expect("index serializes") + "\n"),
    )?;
    Ok(files)
}
