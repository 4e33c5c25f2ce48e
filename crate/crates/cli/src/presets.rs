//! Built-in parameter sets, one per figure family.

use std::f64::consts::FRAC_PI_2;

use crate::config::{ChiKind, ExperimentConfig, Mode, StartKind, TauSetting};
use crate::error::{CliError, Result};

pub const PRESET_NAMES: [&str; 5] = ["fig1", "fig2", "fig3", "fig4", "fig5"];

#[derive(Debug, Clone, PartialEq)]
pub enum PresetRun {
    Single {
        stem: String,
        mode: Mode,
        config: ExperimentConfig,
    },
    /// Steady conduction without correlations, for comparison with a pump.
    Normal {
        stem: String,
        config: ExperimentConfig,
        duration: f64,
    },
}

impl PresetRun {
    pub fn stem(&self) -> &str {
        match self {
            PresetRun::Single { stem, .. } | PresetRun::Normal { stem, .. } => stem,
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        match self {
            PresetRun::Single { config, .. } | PresetRun::Normal { config, .. } => config,
        }
    }
}

fn delta_label(delta: f64) -> &'static str {
    if delta == 0.0 {
        "0"
    } else if delta > 0.0 {
        "pi_2"
    } else {
        "minus_pi_2"
    }
}

fn closed(delta: f64, t_a: f64, t_b: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        dt: Some(1e-3),
        t_final: Some(120.0),
        output_stride: Some(100),
        ..ExperimentConfig::default()
    };
    c.pair.delta = delta;
    c.pair.t_a = t_a;
    c.pair.t_b = t_b;
    c
}

fn open(chi: ChiKind) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        t_final: Some(200.0),
        ..ExperimentConfig::default()
    };
    c.pair.chi = chi;
    c.start.kind = StartKind::Prepared;
    c.start.warmup = 500.0;
    c.hierarchy.ladder_t = 30.0;
    c
}

/// Asymmetric damping so that `<V>` nearly vanishes when the qubits are
/// decoupled at `tau = 6.1`.
pub fn pump_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.bath_a.kappa = 0.01;
    c.bath_b.kappa = 0.023;
    c.bath_a.gamma_c = 0.2;
    c.bath_b.gamma_c = 0.2;
    c.schedule.tau_connect = TauSetting::Time(6.1);
    c.schedule.tau_relax = 500.0;
    c.schedule.n_cycles = 2;
    c.hierarchy.ladder_t = 30.0;
    c
}

/// Runs making up a preset, in output order.
pub fn preset_runs(name: &str) -> Result<Vec<PresetRun>> {
    let single = |stem: String, mode: Mode, config: ExperimentConfig| PresetRun::Single { stem, mode, config };
    Ok(match name {
        "fig1" => [0.0, FRAC_PI_2, -FRAC_PI_2]
            .into_iter()
            .map(|d| single(format!("fig1_delta_{}", delta_label(d)), Mode::Closed, closed(d, 2.0, 1.0)))
            .collect(),
        "fig2" => {
            let mut runs = Vec::new();
            for d in [0.0, -FRAC_PI_2] {
                for (ta, tb) in [(1.5, 1.5), (2.0, 1.0), (1.0, 2.0)] {
                    let stem = format!("fig2_delta_{}_ta_{ta}_tb_{tb}", delta_label(d));
                    runs.push(single(stem, Mode::Closed, closed(d, ta, tb)));
                }
            }
            runs
        }
        "fig3" => vec![single("fig3_anomalous".into(), Mode::Open, open(ChiKind::Optimal))],
        "fig4" => vec![
            single("fig4_uncorrelated".into(), Mode::Open, open(ChiKind::None)),
            single("fig4_anomalous".into(), Mode::Open, open(ChiKind::Optimal)),
        ],
        "fig5" => {
            let c = pump_config();
            let TauSetting::Time(tau) = c.schedule.tau_connect else {
                unreachable!("fixed coupling time")
            };
            let per_cycle = tau + c.schedule.tau_relax;
            let duration = c.schedule.n_cycles as f64 * per_cycle;
            let dt = c.resolved_dt(Mode::Open)?;
            let mut normal = c.clone();
            normal.pair.chi = ChiKind::None;
            normal.hierarchy.ladder_t = 0.0;
            vec![
                single("fig5_pump".into(), Mode::Pump, c),
                PresetRun::Normal {
                    stem: "fig5_normal".into(),
                    config: normal,
                    duration: (duration / dt).round() * dt,
                },
            ]
        }
        other => {
            return Err(CliError::Config(format!(
                "preset: unknown name {other:?}, expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}
