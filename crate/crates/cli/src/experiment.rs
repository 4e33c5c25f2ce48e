//! Single runs: closed, open (dissipative) and pump.

use std::f64::consts::PI;

use qcorr_core::closed::{correlated_state, integrate_lvn, interaction_hamiltonian};
use qcorr_core::heom::{build_hierarchy, run_dissipative};
use qcorr_core::pump::{prepared_start, run_normal_conduction, run_pump};
use qcorr_core::qstate::mutual_information;
use qcorr_core::thermo::cop_report;
use qcorr_core::{BathSpec, Heom, HeomOptions, HierarchyState};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Mode, StartKind};
use crate::error::{CliError, Result};
use crate::output::{rows_from, Row};

/// Scalar results of one run, as listed in sweep summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    /// heat drawn from bath B: last cycle for pumps, whole run otherwise
    pub q_b_bar: f64,
    /// mutual information of the injected state
    pub i0: f64,
    /// `Q_B / (T_A I0)` of the last cycle; NaN outside pump runs
    pub cop_ratio: f64,
    pub sigma_min: f64,
    /// spacing of the first two interior SED maxima; NaN if fewer than two
    pub sed_period: f64,
    /// `Q_B` at `t = pi / (4 Omega)`
    pub q_b_early: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<Row>,
    pub summary: Summary,
    /// mode-specific metadata
    pub details: Value,
}

fn heat_pairs(q_a: &[f64], q_b: &[f64]) -> Vec<(f64, f64)> {
    q_a.iter().copied().zip(q_b.iter().copied()).collect()
}

/// Period from the first two interior local maxima of the SED, each
/// refined by a parabola through its neighbours.
pub fn sed_period(rows: &[Row]) -> f64 {
    let mut peaks = Vec::new();
    for i in 1..rows.len().saturating_sub(1) {
        let (a, b, c) = (rows[i - 1].sed, rows[i].sed, rows[i + 1].sed);
        if b > a && b >= c {
            let h = rows[i + 1].t - rows[i].t;
            let curvature = a - 2.0 * b + c;
            let shift = if curvature < 0.0 { 0.5 * h * (a - c) / curvature } else { 0.0 };
            peaks.push(rows[i].t + shift);
            if peaks.len() == 2 {
                return peaks[1] - peaks[0];
            }
        }
    }
    f64::NAN
}

fn summarize(rows: &[Row], omega: f64, i0: f64, q_b_bar: f64, cop_ratio: f64) -> Summary {
    let t_early = PI / (4.0 * omega);
    let q_b_early = rows
        .iter()
        .min_by(|x, y| (x.t - t_early).abs().total_cmp(&(y.t - t_early).abs()))
        .map_or(f64::NAN, |r| r.q_b);
    Summary {
        q_b_bar,
        i0,
        cop_ratio,
        sigma_min: rows.iter().map(|r| r.sigma).fold(f64::INFINITY, f64::min),
        sed_period: sed_period(rows),
        q_b_early,
    }
}

pub fn run(config: &ExperimentConfig, mode: Mode) -> Result<RunOutput> {
    match mode {
        Mode::Closed => run_closed(config),
        Mode::Open => run_open(config),
        Mode::Pump => run_pump_mode(config),
        Mode::Sweep => Err(CliError::Config("mode: a sweep is not a single run".into())),
    }
}

pub fn run_closed(config: &ExperimentConfig) -> Result<RunOutput> {
    let cfg = config.pair_config()?;
    let dt = config.resolved_dt(Mode::Closed)?;
    let rho0 = correlated_state(&cfg, &config.chi_matrix()?)?;
    let run = integrate_lvn(&cfg, &rho0, dt, config.resolved_t_final(), config.resolved_stride(dt))?;
    let v = interaction_hamiltonian(&cfg);
    let v_expect: Vec<f64> = run.states.iter().map(|s| s.expect(&v)).collect();
    let heat = vec![(0.0, 0.0); run.states.len()];
    let rows = rows_from(&cfg, &run.trace, &run.states, &heat, &v_expect)?;
    let i0 = mutual_information(&rho0)?;
    let summary = summarize(&rows, cfg.omega, i0, 0.0, f64::NAN);
    Ok(RunOutput {
        rows,
        summary,
        details: json!({ "initial_mutual_information": i0 }),
    })
}

/// Coupled hierarchy and its state at `t = 0` for an open run.
fn open_start(
    config: &ExperimentConfig,
    baths: &[BathSpec; 2],
    options: HeomOptions,
    kind: StartKind,
    dt: f64,
) -> Result<(Heom, HierarchyState)> {
    let cfg = config.pair_config()?;
    Ok(match kind {
        StartKind::Prepared => prepared_start(&cfg, baths, options, &config.chi_mode()?, config.start.warmup, dt)?,
        StartKind::Factorized => {
            let rho0 = correlated_state(&cfg, &config.chi_matrix()?)?;
            build_hierarchy(&cfg, &baths[0], &baths[1], options, &rho0)?
        }
    })
}

pub fn run_open(config: &ExperimentConfig) -> Result<RunOutput> {
    let cfg = config.pair_config()?;
    let dt = config.resolved_dt(Mode::Open)?;
    let baths = config.baths()?;
    let options = config.heom_options()?;
    let (heom, state) = open_start(config, &baths, options, config.start.kind, dt)?;
    let n_ados = heom.n_ados();
    let run = run_dissipative(&heom, state, dt, config.resolved_t_final(), config.resolved_stride(dt))?;
    let heat = heat_pairs(&run.ledger.q_a, &run.ledger.q_b);
    let rows = rows_from(&cfg, &run.trace, &run.states, &heat, &run.ledger.e_int)?;
    let i0 = mutual_information(&run.states[0])?;
    let q_b = *run.ledger.q_b.last().unwrap_or(&0.0);
    let summary = summarize(&rows, cfg.omega, i0, q_b, f64::NAN);
    Ok(RunOutput {
        rows,
        summary,
        details: json!({
            "n_ados": n_ados,
            "min_eigenvalue": run.min_eigenvalue,
            "start": config.start,
        }),
    })
}

pub fn run_pump_mode(config: &ExperimentConfig) -> Result<RunOutput> {
    let cfg = config.pair_config()?;
    let dt = config.resolved_dt(Mode::Pump)?;
    let baths = config.baths()?;
    let schedule = config.schedule()?;
    let run = run_pump(&cfg, &baths, &schedule, config.heom_options()?, dt, config.resolved_stride(dt))?;
    let heat = heat_pairs(&run.ledger.q_a, &run.ledger.q_b);
    let rows = rows_from(&cfg, &run.trace, &run.states, &heat, &run.ledger.e_int)?;
    let mut reports = Vec::with_capacity(run.cycles.len());
    for c in &run.cycles {
        reports.push(cop_report(c, c.i0_injected, &cfg, schedule.charge_decouple_work)?);
    }
    let last = run.cycles.last().expect("at least one cycle");
    let cop = reports.last().map_or(f64::NAN, |r| r.cop_ratio);
    let summary = summarize(&rows, cfg.omega, last.i0_injected, last.q_b_cycle, cop);
    Ok(RunOutput {
        rows,
        summary,
        details: json!({
            "tau_connect": run.tau_connect,
            "cycles": run.cycles,
            "cop": reports,
            "min_eigenvalue": run.min_eigenvalue,
        }),
    })
}

/// Uncorrelated qubits kept coupled for `duration` after the pump warm-up.
pub fn run_normal(config: &ExperimentConfig, duration: f64) -> Result<RunOutput> {
    let cfg = config.pair_config()?;
    let dt = config.resolved_dt(Mode::Open)?;
    let baths = config.baths()?;
    let warmup = config.schedule.warmup.unwrap_or(config.schedule.tau_relax);
    let (trace, ledger, states) = run_normal_conduction(
        &cfg,
        &baths,
        config.heom_options()?,
        warmup,
        duration,
        dt,
        config.resolved_stride(dt),
    )?;
    let heat = heat_pairs(&ledger.q_a, &ledger.q_b);
    let rows = rows_from(&cfg, &trace, &states, &heat, &ledger.e_int)?;
    let q_b = *ledger.q_b.last().unwrap_or(&0.0);
    let summary = summarize(&rows, cfg.omega, 0.0, q_b, f64::NAN);
    Ok(RunOutput {
        rows,
        summary,
        details: json!({ "warmup": warmup, "duration": duration }),
    })
}

/// Heat after `t` at one hierarchy setting, from a factorized start.
fn ladder_point(config: &ExperimentConfig, depth: usize, matsubara: usize, t: f64) -> Result<(f64, f64, f64)> {
    let mut c = config.clone();
    c.hierarchy.depth = depth;
    c.hierarchy.matsubara = matsubara;
    c.dt = None;
    let dt = config.resolved_dt(Mode::Open)?.min(c.resolved_dt(Mode::Open)?);
    let baths = c.baths()?;
    let (heom, state) = open_start(&c, &baths, c.heom_options()?, StartKind::Factorized, dt)?;
    let run = run_dissipative(&heom, state, dt, t, usize::MAX)?;
    Ok((*run.ledger.q_a.last().unwrap(), *run.ledger.q_b.last().unwrap(), dt))
}

/// Change of `(Q_A, Q_B)` at `hierarchy.ladder_t` when the depth or the
/// number of Matsubara terms is raised by one. `Value::Null` when disabled.
pub fn convergence_ladder(config: &ExperimentConfig) -> Result<Value> {
    let t = config.hierarchy.ladder_t;
    if t == 0.0 {
        return Ok(Value::Null);
    }
    let (l, k) = (config.hierarchy.depth, config.hierarchy.matsubara);
    let base = ladder_point(config, l, k, t)?;
    let deeper = ladder_point(config, l + 1, k, t)?;
    let wider = ladder_point(config, l, k + 1, t)?;
    let diff = |x: (f64, f64, f64)| (x.0 - base.0).abs().max((x.1 - base.1).abs());
    Ok(json!({
        "start": "factorized",
        "t": t,
        "base": { "depth": l, "matsubara": k, "dt": base.2, "q_a": base.0, "q_b": base.1 },
        "depth_plus_one": { "dt": deeper.2, "q_a": deeper.0, "q_b": deeper.1, "max_abs_change": diff(deeper) },
        "matsubara_plus_one": { "dt": wider.2, "q_a": wider.0, "q_b": wider.1, "max_abs_change": diff(wider) },
    }))
}
