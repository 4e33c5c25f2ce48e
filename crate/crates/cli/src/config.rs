//! Strict TOML experiment configuration.
//!
//! Every section is optional and falls back to the anomalous-heat preset
//! (`Omega = 0.1`, `delta = -pi/2`, `T_A = 2`, `T_B = 1`, `kappa = 0.01`).
//! Unknown keys are rejected so that a misspelled parameter can never be
//! silently replaced by its default.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use qcorr_core::closed::{optimal_chi, wrap_angle};
use qcorr_core::heom::{Terminator, DEFAULT_ADO_CAP};
use qcorr_core::{
    BathSpec, ChiMode, CorrelationMatrix, CouplingOperator, CycleSchedule, Heom, HeomOptions, PairConfig,
    TauConnect,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Closed,
    Open,
    Pump,
    Sweep,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Closed => "closed",
            Mode::Open => "open",
            Mode::Pump => "pump",
            Mode::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiKind {
    None,
    #[default]
    Optimal,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairSection {
    pub t_a: f64,
    pub t_b: f64,
    pub omega: f64,
    /// `phi_v - phi_chi`
    pub delta: f64,
    pub phi_v: f64,
    pub chi: ChiKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi11: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi_magnitude: Option<f64>,
}

impl Default for PairSection {
    fn default() -> Self {
        Self {
            t_a: 2.0,
            t_b: 1.0,
            omega: 0.1,
            delta: -FRAC_PI_2,
            phi_v: 0.0,
            chi: ChiKind::Optimal,
            chi11: None,
            chi_magnitude: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BathSection {
    pub kappa: f64,
    pub gamma_c: f64,
    pub coupling: CouplingOperator,
}

impl Default for BathSection {
    fn default() -> Self {
        Self {
            kappa: 0.01,
            gamma_c: 1.0,
            coupling: CouplingOperator::SigmaX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchySection {
    pub depth: usize,
    pub matsubara: usize,
    pub terminator: Terminator,
    /// Re-zero the bath memory whenever correlations are injected.
    pub reset_ados: bool,
    /// Length of the depth/Matsubara convergence check; 0 skips it.
    pub ladder_t: f64,
}

impl Default for HierarchySection {
    fn default() -> Self {
        Self {
            depth: HeomOptions::default().depth,
            matsubara: 2,
            terminator: Terminator::TimeLocal,
            reset_ados: false,
            ladder_t: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    /// Thermalize each qubit with its bath, inject correlations, then couple.
    #[default]
    Prepared,
    /// Correlated qubits next to fresh baths.
    Factorized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StartSection {
    pub kind: StartKind,
    pub warmup: f64,
}

impl Default for StartSection {
    fn default() -> Self {
        Self {
            kind: StartKind::Prepared,
            warmup: 500.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauName {
    Refined,
    ClosedFormula,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSetting {
    Time(f64),
    Named(TauName),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub tau_connect: TauSetting,
    pub tau_relax: f64,
    pub n_cycles: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
    pub charge_decouple_work: bool,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            tau_connect: TauSetting::Named(TauName::Refined),
            tau_relax: 500.0,
            n_cycles: 2,
            warmup: None,
            charge_decouple_work: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Mode of every run in the sweep.
    pub mode: Mode,
    /// Dotted config key -> values; runs cover the cartesian product in key order.
    pub grid: BTreeMap<String, Vec<f64>>,
    pub max_runs: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            mode: Mode::Closed,
            grid: BTreeMap::new(),
            max_runs: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// Defaults to 1e-3 for closed runs and to the largest power of two
    /// below the hierarchy step guard otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    /// Defaults to one sample per 0.25 time units.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub pair: PairSection,
    pub bath_a: BathSection,
    pub bath_b: BathSection,
    pub hierarchy: HierarchySection,
    pub start: StartSection,
    pub schedule: ScheduleSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

/// Parse a TOML document; errors carry the dotted path of the offending key.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::new(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.message().trim().to_string();
        let location = inner
            .span()
            .map(|span| {
                let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                format!(" (line {line})")
            })
            .unwrap_or_default();
        if path == "." || path.is_empty() {
            CliError::Config(format!("{message}{location}"))
        } else {
            CliError::Config(format!("{path}: {message}{location}"))
        }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn range_error(path: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {reason}"))
}

fn check_positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(range_error(path, format!("must be positive, got {v}")))
    }
}

fn check_non_negative(path: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(range_error(path, format!("must be non-negative, got {v}")))
    }
}

fn check_finite(path: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(range_error(path, format!("must be finite, got {v}")))
    }
}

impl ExperimentConfig {
    /// Range checks that do not depend on the mode.
    pub fn validate(&self) -> Result<()> {
        if let Some(dt) = self.dt {
            check_positive("dt", dt)?;
        }
        if let Some(t) = self.t_final {
            check_non_negative("t_final", t)?;
        }
        if self.output_stride == Some(0) {
            return Err(range_error("output_stride", "must be at least 1"));
        }
        let p = &self.pair;
        check_positive("pair.t_a", p.t_a)?;
        check_positive("pair.t_b", p.t_b)?;
        check_positive("pair.omega", p.omega)?;
        check_finite("pair.delta", p.delta)?;
        check_finite("pair.phi_v", p.phi_v)?;
        match p.chi {
            ChiKind::Custom => {
                let chi11 = p.chi11.ok_or_else(|| range_error("pair.chi11", "required when chi = \"custom\""))?;
                check_finite("pair.chi11", chi11)?;
                let m = p
                    .chi_magnitude
                    .ok_or_else(|| range_error("pair.chi_magnitude", "required when chi = \"custom\""))?;
                check_non_negative("pair.chi_magnitude", m)?;
            }
            _ => {
                if p.chi11.is_some() {
                    return Err(range_error("pair.chi11", "only allowed with chi = \"custom\""));
                }
                if p.chi_magnitude.is_some() {
                    return Err(range_error("pair.chi_magnitude", "only allowed with chi = \"custom\""));
                }
            }
        }
        for (name, bath) in [("bath_a", &self.bath_a), ("bath_b", &self.bath_b)] {
            check_non_negative(&format!("{name}.kappa"), bath.kappa)?;
            check_positive(&format!("{name}.gamma_c"), bath.gamma_c)?;
        }
        if self.hierarchy.depth == 0 {
            return Err(range_error("hierarchy.depth", "must be at least 1"));
        }
        check_non_negative("hierarchy.ladder_t", self.hierarchy.ladder_t)?;
        check_non_negative("start.warmup", self.start.warmup)?;
        let s = &self.schedule;
        if let TauSetting::Time(t) = s.tau_connect {
            check_non_negative("schedule.tau_connect", t)?;
        }
        check_positive("schedule.tau_relax", s.tau_relax)?;
        if s.n_cycles == 0 {
            return Err(range_error("schedule.n_cycles", "must be at least 1"));
        }
        if let Some(w) = s.warmup {
            check_non_negative("schedule.warmup", w)?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.mode == Mode::Sweep {
                return Err(range_error("sweep.mode", "a sweep cannot run sweeps"));
            }
            if sweep.max_runs == 0 {
                return Err(range_error("sweep.max_runs", "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn pair_config(&self) -> Result<PairConfig> {
        let p = &self.pair;
        Ok(PairConfig::new(p.t_a, p.t_b, p.omega, p.phi_v, wrap_angle(p.phi_v - p.delta))?)
    }

    pub fn baths(&self) -> Result<[BathSpec; 2]> {
        let k = self.hierarchy.matsubara;
        let a = BathSpec::new(self.bath_a.kappa, self.bath_a.gamma_c, self.pair.t_a, k)?
            .with_coupling(self.bath_a.coupling);
        let b = BathSpec::new(self.bath_b.kappa, self.bath_b.gamma_c, self.pair.t_b, k)?
            .with_coupling(self.bath_b.coupling);
        Ok([a, b])
    }

    /// Hierarchy options; `QCORR_PUMP_CAP` overrides the ADO cap.
    pub fn heom_options(&self) -> Result<HeomOptions> {
        let ado_cap = match std::env::var("QCORR_PUMP_CAP") {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("QCORR_PUMP_CAP: expected a positive integer, got {v:?}")))?,
            Err(_) => DEFAULT_ADO_CAP,
        };
        Ok(HeomOptions {
            depth: self.hierarchy.depth,
            terminator: self.hierarchy.terminator,
            ado_cap,
            ..HeomOptions::default()
        })
    }

    pub fn chi_mode(&self) -> Result<ChiMode> {
        Ok(match self.pair.chi {
            ChiKind::None => ChiMode::None,
            ChiKind::Optimal => ChiMode::Optimal,
            ChiKind::Custom => {
                let cfg = self.pair_config()?;
                ChiMode::Custom(CorrelationMatrix::new(
                    self.pair.chi11.unwrap_or(0.0),
                    self.pair.chi_magnitude.unwrap_or(0.0),
                    cfg.phi_chi,
                ))
            }
        })
    }

    /// Correlation matrix added to the Gibbs product at the pair temperatures.
    pub fn chi_matrix(&self) -> Result<CorrelationMatrix> {
        let cfg = self.pair_config()?;
        Ok(match self.chi_mode()? {
            ChiMode::None => CorrelationMatrix::zero(),
            ChiMode::Optimal => optimal_chi(&cfg),
            ChiMode::Custom(chi) => chi,
        })
    }

    pub fn schedule(&self) -> Result<CycleSchedule> {
        let s = &self.schedule;
        let tau_connect = match s.tau_connect {
            TauSetting::Time(t) => TauConnect::Fixed(t),
            TauSetting::Named(TauName::ClosedFormula) => TauConnect::ClosedFormula,
            TauSetting::Named(TauName::Refined) => TauConnect::Refined,
        };
        Ok(CycleSchedule {
            tau_connect,
            tau_relax: s.tau_relax,
            n_cycles: s.n_cycles,
            chi_mode: self.chi_mode()?,
            reset_ados: self.hierarchy.reset_ados,
            warmup: s.warmup,
            charge_decouple_work: s.charge_decouple_work,
        })
    }

    /// Time step actually used for `mode`.
    pub fn resolved_dt(&self, mode: Mode) -> Result<f64> {
        if let Some(dt) = self.dt {
            return Ok(dt);
        }
        if mode == Mode::Closed {
            return Ok(1e-3);
        }
        let [a, b] = self.baths()?;
        let heom = Heom::new(&self.pair_config()?, &a, &b, HeomOptions { ado_cap: usize::MAX, ..self.heom_options()? })?;
        let limit = heom.max_step();
        Ok(2f64.powi(limit.log2().floor() as i32))
    }

    pub fn resolved_t_final(&self) -> f64 {
        self.t_final.unwrap_or(200.0)
    }

    pub fn resolved_stride(&self, dt: f64) -> usize {
        self.output_stride.unwrap_or(((0.25 / dt).round() as usize).max(1))
    }

    /// Copy with every optional numeric setting filled in for `mode`, so
    /// that the result re-runs identically.
    pub fn resolved(&self, mode: Mode) -> Result<ExperimentConfig> {
        let mut out = self.clone();
        let dt = self.resolved_dt(mode)?;
        out.mode = Some(mode);
        out.dt = Some(dt);
        out.t_final = Some(self.resolved_t_final());
        out.output_stride = Some(self.resolved_stride(dt));
        Ok(out)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}
