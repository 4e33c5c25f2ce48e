//! The correlation-fuelled heat pump: thermalize, inject correlations,
//! couple the qubits for a short window, decouple and rethermalize.

use log::{debug, warn};
use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::closed::{
    first_sed_maximum_time, step_count, interaction_matrix, local_energies, optimal_chi_for, CorrelationMatrix, GibbsWeights,
    PairConfig, SedTrace,
};
use crate::error::{Error, Result};
use crate::heom::{BathSpec, Heom, HeatLedger, HeomOptions, HierarchyState, Mat4, Sampler};
use crate::qstate::{gibbs_state, mutual_information, qubit_hamiltonian, DensityOperator, C64};

/// Which correlations are added to the pair at the start of each cycle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiMode {
    None,
    /// Maximal concurrence for the current marginals, phase `phi_chi`.
    #[default]
    Optimal,
    Custom(CorrelationMatrix),
}

/// How long the qubits stay coupled in each cycle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauConnect {
    Fixed(f64),
    /// First SED maximum of the closed pair.
    ClosedFormula,
    /// Golden-section search for the first SED maximum of the dissipative
    /// pair, started from the closed-system value.
    #[default]
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleSchedule {
    pub tau_connect: TauConnect,
    pub tau_relax: f64,
    pub n_cycles: usize,
    pub chi_mode: ChiMode,
    /// Zero the bath-memory ADOs at every injection.
    pub reset_ados: bool,
    /// Thermalization before the first cycle; defaults to `tau_relax`.
    pub warmup: Option<f64>,
    /// Count `|<V>|` at decoupling as work in the COP.
    pub charge_decouple_work: bool,
}

impl Default for CycleSchedule {
    fn default() -> Self {
        Self {
            tau_connect: TauConnect::Refined,
            tau_relax: 500.0,
            n_cycles: 2,
            chi_mode: ChiMode::Optimal,
            reset_ados: false,
            warmup: None,
            charge_decouple_work: false,
        }
    }
}

impl CycleSchedule {
    pub fn validate(&self, baths: &[BathSpec; 2]) -> Result<()> {
        if let TauConnect::Fixed(tau) = self.tau_connect {
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(Error::Parameter {
                    name: "tau_connect",
                    reason: format!("must be non-negative, got {tau}"),
                });
            }
        }
        if !(self.tau_relax > 0.0 && self.tau_relax.is_finite()) {
            return Err(Error::Parameter {
                name: "tau_relax",
                reason: format!("must be positive, got {}", self.tau_relax),
            });
        }
        if self.n_cycles == 0 {
            return Err(Error::Parameter {
                name: "n_cycles",
                reason: "at least one cycle is needed".into(),
            });
        }
        if let Some(w) = self.warmup {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Parameter {
                    name: "warmup",
                    reason: format!("must be non-negative, got {w}"),
                });
            }
        }
        let kappa = baths[0].kappa.min(baths[1].kappa);
        if self.tau_relax * kappa < 3.0 {
            warn!(
                "tau_relax = {} is short compared with 1/kappa = {}; the qubits may not rethermalize",
                self.tau_relax,
                1.0 / kappa
            );
        }
        Ok(())
    }
}

/// Heat and resource accounting of one completed cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle_index: usize,
    /// heat that left bath A during the cycle
    pub q_a_cycle: f64,
    pub q_b_cycle: f64,
    /// mutual information of the injected state
    pub i0_injected: f64,
    /// `<V>` just before decoupling
    pub residual_v: f64,
    /// largest trace distance of a qubit marginal from its value at the
    /// start of the cycle
    pub end_state_distance: f64,
    /// largest trace distance of a qubit marginal from the bare Gibbs state
    pub gibbs_distance: f64,
    pub tau_connect: f64,
}

fn marginals(rho: &Mat4) -> (Matrix2<C64>, Matrix2<C64>) {
    let a = Matrix2::from_fn(|i, j| rho[(2 * i, 2 * j)] + rho[(2 * i + 1, 2 * j + 1)]);
    let b = Matrix2::from_fn(|i, j| rho[(i, j)] + rho[(2 + i, 2 + j)]);
    (a, b)
}

fn trace_distance2(x: &Matrix2<C64>, y: &Matrix2<C64>) -> f64 {
    // eigenvalues of a traceless Hermitian 2x2 difference are +-r
    let d = x - y;
    let half_diff = (d[(0, 0)].re - d[(1, 1)].re) / 2.0;
    let mean = (d[(0, 0)].re + d[(1, 1)].re) / 2.0;
    let r = (half_diff * half_diff + d[(0, 1)].norm_sqr()).sqrt();
    0.5 * ((mean + r).abs() + (mean - r).abs())
}

fn gibbs_marginals(config: &PairConfig) -> Result<(Matrix2<C64>, Matrix2<C64>)> {
    let h = qubit_hamiltonian();
    let to2 = |rho: DensityOperator| Matrix2::from_fn(|i, j| rho.matrix()[(i, j)]);
    Ok((
        to2(gibbs_state(config.beta_a(), &h)?),
        to2(gibbs_state(config.beta_b(), &h)?),
    ))
}

/// Largest marginal trace distance from the bare Gibbs states.
pub fn gibbs_distance(rho: &Mat4, config: &PairConfig) -> Result<f64> {
    let (a, b) = marginals(rho);
    let (ga, gb) = gibbs_marginals(config)?;
    Ok(trace_distance2(&a, &ga).max(trace_distance2(&b, &gb)))
}

/// Replace ADO 0 by the product of its marginals plus the requested
/// correlations. Returns the mutual information of the new ADO 0.
///
/// The qubit marginals are left as they are; only correlations are added.
pub fn inject_correlation(
    heom: &Heom,
    state: &mut HierarchyState,
    chi_mode: &ChiMode,
    reset_ados: bool,
) -> Result<f64> {
    let config = heom.config();
    let distance = gibbs_distance(state.rho(), config)?;
    if distance > 0.05 {
        warn!("injecting correlations into marginals {distance:.3e} away from their Gibbs states");
    }
    let chi = match chi_mode {
        ChiMode::None => {
            let i0 = mutual_information(&state.density()?)?;
            if reset_ados {
                let rho = *state.rho();
                heom.replace_system_state(state, &rho, true);
            }
            return Ok(i0);
        }
        ChiMode::Optimal | ChiMode::Custom(_) => {
            let rho = state.rho();
            let weights = GibbsWeights::from_ground_populations(marginals(rho).0[(0, 0)].re, marginals(rho).1[(0, 0)].re);
            match chi_mode {
                ChiMode::Custom(chi) => {
                    chi.check_feasible(&weights, 1e-12)?;
                    *chi
                }
                _ => optimal_chi_for(&weights, config.phi_chi),
            }
        }
    };
    let (a, b) = marginals(state.rho());
    let product = a.kronecker(&b);
    let rho = Mat4::from_fn(|i, j| product[(i, j)]) + chi.to_matrix4();
    let checked = DensityOperator::with_tolerance(
        nalgebra::DMatrix::from_iterator(4, 4, rho.iter().copied()),
        crate::heom::RELAXED,
    )
    .map_err(|e| Error::Infeasible(format!("correlated state is not a density operator: {e}")))?;
    heom.replace_system_state(state, &rho, reset_ados);
    mutual_information(&checked)
}

/// `<V>` at the decoupling instant; zero when the qubits are already apart.
pub fn decouple_cost(heom: &Heom, state: &HierarchyState) -> f64 {
    if heom.is_coupled() {
        (interaction_matrix(heom.config()) * state.rho()).trace().re
    } else {
        0.0
    }
}

/// Time of the first SED maximum of the coupled, dissipative pair started
/// from `state`, by golden-section search around the closed-system value.
pub fn refine_tau_connect(heom: &Heom, state: &HierarchyState, dt: f64) -> Result<f64> {
    let guess = first_sed_maximum_time(heom.config());
    let coupled = heom.clone().with_coupled(true);
    let sed_at = |t: f64| -> Result<f64> {
        let mut s = state.clone();
        let n = (t / dt).round() as usize;
        coupled.advance(&mut s, dt, n)?;
        let (ea, eb) = local_energies(s.rho());
        Ok(ea - eb)
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.5 * guess, 1.5 * guess);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (sed_at(x1)?, sed_at(x2)?);
    while hi - lo > dt {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = sed_at(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = sed_at(x2)?;
        }
    }
    let tau = ((lo + hi) / 2.0 / dt).round() * dt;
    debug!("refined tau_connect {tau} from closed-system value {guess}");
    Ok(tau)
}

/// Everything produced by a pump run.
#[derive(Debug, Clone)]
pub struct PumpRun {
    pub cycles: Vec<CycleRecord>,
    /// heat counted from the start of the first cycle
    pub ledger: HeatLedger,
    pub trace: SedTrace,
    pub states: Vec<DensityOperator>,
    pub tau_connect: f64,
    pub min_eigenvalue: f64,
    pub final_state: HierarchyState,
}

impl PumpRun {
    /// Mutual information spent per cycle (that of the first injection).
    pub fn i0(&self) -> f64 {
        self.cycles.first().map_or(0.0, |c| c.i0_injected)
    }
}

fn product_gibbs(config: &PairConfig) -> Result<DensityOperator> {
    let h = qubit_hamiltonian();
    Ok(gibbs_state(config.beta_a(), &h)?.tensor(&gibbs_state(config.beta_b(), &h)?))
}

/// Decoupled qubits equilibrated with their baths for `warmup`, with the
/// clock and the heat counters reset.
fn thermalized(heom: &Heom, warmup: f64, dt: f64) -> Result<HierarchyState> {
    let mut state = heom.initial_state(&product_gibbs(heom.config())?)?;
    let decoupled = heom.clone().with_coupled(false);
    decoupled.advance(&mut state, dt, step_count(dt, warmup)?)?;
    heom.reset_heat(&mut state);
    state.time = 0.0;
    Ok(state)
}

/// Start of a dissipative run the way an experiment would prepare it: each
/// qubit equilibrates with its bath, correlations are injected, and the
/// qubit-qubit coupling is switched on at `t = 0`.
pub fn prepared_start(
    config: &PairConfig,
    baths: &[BathSpec; 2],
    options: HeomOptions,
    chi_mode: &ChiMode,
    warmup: f64,
    dt: f64,
) -> Result<(Heom, HierarchyState)> {
    let heom = Heom::new(config, &baths[0], &baths[1], options)?;
    let mut state = thermalized(&heom, warmup, dt)?;
    inject_correlation(&heom, &mut state, chi_mode, false)?;
    Ok((heom.with_coupled(true), state))
}

/// Run the pump with the baths at the pair temperatures.
pub fn run_pump(
    config: &PairConfig,
    baths: &[BathSpec; 2],
    schedule: &CycleSchedule,
    options: HeomOptions,
    dt: f64,
    stride: usize,
) -> Result<PumpRun> {
    schedule.validate(baths)?;
    let mut heom = Heom::new(config, &baths[0], &baths[1], options)?.with_coupled(false);
    let mut state = thermalized(&heom, schedule.warmup.unwrap_or(schedule.tau_relax), dt)?;

    let tau = match schedule.tau_connect {
        TauConnect::Fixed(t) => t,
        TauConnect::ClosedFormula => first_sed_maximum_time(config),
        TauConnect::Refined => {
            let mut probe = state.clone();
            inject_correlation(&heom, &mut probe, &schedule.chi_mode, schedule.reset_ados)?;
            refine_tau_connect(&heom, &probe, dt)?
        }
    };
    let tau = (tau / dt).round() * dt;

    let mut sampler = Sampler::new();
    sampler.record(&heom, &state)?;
    let mut cycles = Vec::with_capacity(schedule.n_cycles);
    for cycle_index in 0..schedule.n_cycles {
        let (start_a, start_b) = marginals(state.rho());
        let q_start = heom.heat(&state);
        let i0 = inject_correlation(&heom, &mut state, &schedule.chi_mode, schedule.reset_ados)?;

        heom.set_coupled(true);
        sampler.advance(&heom, &mut state, dt, tau, stride)?;
        let residual_v = decouple_cost(&heom, &state);
        if residual_v.abs() > 1e-6 {
            debug!("decoupling costs work {residual_v:.3e} in cycle {cycle_index}");
        }
        heom.set_coupled(false);

        let half = ((schedule.tau_relax / 2.0 / dt).round() * dt).min(schedule.tau_relax);
        sampler.advance(&heom, &mut state, dt, half, stride)?;
        let (mid_a, mid_b) = marginals(state.rho());
        let mid = trace_distance2(&mid_a, &start_a).max(trace_distance2(&mid_b, &start_b));
        sampler.advance(&heom, &mut state, dt, schedule.tau_relax - half, stride)?;
        let (end_a, end_b) = marginals(state.rho());
        let end = trace_distance2(&end_a, &start_a).max(trace_distance2(&end_b, &start_b));
        if end > 1e-4 && end >= mid {
            return Err(Error::Rethermalization(format!(
                "cycle {cycle_index}: marginal distance {end:.3e} did not shrink from {mid:.3e}"
            )));
        }
        let q_end = heom.heat(&state);
        cycles.push(CycleRecord {
            cycle_index,
            q_a_cycle: q_end[0] - q_start[0],
            q_b_cycle: q_end[1] - q_start[1],
            i0_injected: i0,
            residual_v,
            end_state_distance: end,
            gibbs_distance: gibbs_distance(state.rho(), config)?,
            tau_connect: tau,
        });
    }
    Ok(PumpRun {
        cycles,
        ledger: sampler.ledger,
        trace: sampler.trace,
        states: sampler.states,
        tau_connect: tau,
        min_eigenvalue: sampler.min_eigenvalue,
        final_state: state,
    })
}

/// Heat exchanged when the uncorrelated qubits stay coupled for `duration`,
/// after the same warm-up as the pump.
pub fn run_normal_conduction(
    config: &PairConfig,
    baths: &[BathSpec; 2],
    options: HeomOptions,
    warmup: f64,
    duration: f64,
    dt: f64,
    stride: usize,
) -> Result<(SedTrace, HeatLedger, Vec<DensityOperator>)> {
    let (heom, mut state) = prepared_start(config, baths, options, &ChiMode::None, warmup, dt)?;
    let mut sampler = Sampler::new();
    sampler.record(&heom, &state)?;
    sampler.advance(&heom, &mut state, dt, duration, stride)?;
    Ok((sampler.trace, sampler.ledger, sampler.states))
}
