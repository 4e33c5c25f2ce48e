//! Energies, entropies and entropy production of the qubit pair, plus the
//! coefficient-of-performance bookkeeping of the pump.

use serde::{Deserialize, Serialize};

use crate::closed::{local_energies, PairConfig};
use crate::error::{Error, Result};
use crate::pump::CycleRecord;
use crate::qstate::{
    gibbs_state, partial_trace, qubit_hamiltonian, relative_entropy, von_neumann_entropy, DensityOperator,
    Subsystem,
};

/// Thermodynamic state of the pair at one sample time.
///
/// `q_a`, `q_b` count energy that has left the respective bath, so the bath
/// entropies change by `-q / T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermoSnapshot {
    pub t: f64,
    pub e_a: f64,
    pub e_b: f64,
    pub s_a: f64,
    pub s_b: f64,
    pub s_ab: f64,
    pub i_ab: f64,
    pub q_a: f64,
    pub q_b: f64,
    /// entropy production with each qubit treated as its own system
    pub sigma0: f64,
    /// entropy production with the pair treated as one system
    pub sigma: f64,
}

impl ThermoSnapshot {
    pub fn sed(&self) -> f64 {
        self.e_a - self.e_b
    }
}

struct Entropies {
    e_a: f64,
    e_b: f64,
    s_a: f64,
    s_b: f64,
    s_ab: f64,
}

fn entropies(rho: &DensityOperator) -> Result<Entropies> {
    let (e_a, e_b) = local_energies(&rho.to_matrix4()?);
    Ok(Entropies {
        e_a,
        e_b,
        s_a: von_neumann_entropy(&partial_trace(rho, Subsystem::A)?),
        s_b: von_neumann_entropy(&partial_trace(rho, Subsystem::B)?),
        s_ab: von_neumann_entropy(rho),
    })
}

/// Reference snapshot at `t` with no heat exchanged yet.
pub fn initial_snapshot(t: f64, rho0: &DensityOperator) -> Result<ThermoSnapshot> {
    let e = entropies(rho0)?;
    Ok(ThermoSnapshot {
        t,
        e_a: e.e_a,
        e_b: e.e_b,
        s_a: e.s_a,
        s_b: e.s_b,
        s_ab: e.s_ab,
        i_ab: e.s_a + e.s_b - e.s_ab,
        q_a: 0.0,
        q_b: 0.0,
        sigma0: 0.0,
        sigma: 0.0,
    })
}

pub fn snapshot(
    t: f64,
    rho_ab: &DensityOperator,
    heat: (f64, f64),
    config: &PairConfig,
    reference: &ThermoSnapshot,
) -> Result<ThermoSnapshot> {
    let e = entropies(rho_ab)?;
    let (q_a, q_b) = heat;
    let bath_entropy = -q_a / config.t_a - q_b / config.t_b;
    let sigma = (e.s_ab - reference.s_ab) + bath_entropy;
    let sigma0 = (e.s_a - reference.s_a) + (e.s_b - reference.s_b) + bath_entropy;
    Ok(ThermoSnapshot {
        t,
        e_a: e.e_a,
        e_b: e.e_b,
        s_a: e.s_a,
        s_b: e.s_b,
        s_ab: e.s_ab,
        i_ab: e.s_a + e.s_b - e.s_ab,
        q_a,
        q_b,
        sigma0,
        sigma,
    })
}

/// Snapshots along a sampled trajectory; the first state is the reference
/// and heat is expected to be zero there.
pub fn trajectory_snapshots(
    times: &[f64],
    states: &[DensityOperator],
    heat: &[(f64, f64)],
    config: &PairConfig,
) -> Result<Vec<ThermoSnapshot>> {
    if times.len() != states.len() || heat.len() != states.len() {
        return Err(Error::Dimension {
            expected: states.len(),
            found: times.len().min(heat.len()),
        });
    }
    let Some(first) = states.first() else {
        return Ok(Vec::new());
    };
    let reference = initial_snapshot(times[0], first)?;
    times
        .iter()
        .zip(states)
        .zip(heat)
        .map(|((&t, rho), &q)| snapshot(t, rho, q, config, &reference))
        .collect()
}

/// How the pair evolved between the reference and the current state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Evolution {
    Closed,
    Dissipative,
}

/// Terms of the energy-entropy balance between two initially locally
/// thermal qubits that only talk to each other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyEntropyBalance {
    /// `(beta_A - beta_B) Delta E_A`
    pub lhs: f64,
    /// `S(rho_A(t) || rho_A^G)`
    pub rel_a: f64,
    pub rel_b: f64,
    /// change of mutual information
    pub d_i: f64,
}

impl EnergyEntropyBalance {
    pub fn residual(&self) -> f64 {
        self.lhs - (self.rel_a + self.rel_b + self.d_i)
    }

    /// Energy flows from cold to hot only when the correlations pay for it.
    pub fn is_anomalous_window(&self) -> bool {
        self.d_i < -(self.rel_a + self.rel_b)
    }
}

/// Decompose `(beta_A - beta_B) Delta E_A` for a closed trajectory that
/// started from `reference` (locally Gibbs at the config temperatures).
pub fn eq2_decomposition(
    rho_t: &DensityOperator,
    config: &PairConfig,
    reference: &DensityOperator,
    evolution: Evolution,
) -> Result<EnergyEntropyBalance> {
    if evolution != Evolution::Closed {
        return Err(Error::NotClosedEvolution);
    }
    let h = qubit_hamiltonian();
    let gibbs_a = gibbs_state(config.beta_a(), &h)?;
    let gibbs_b = gibbs_state(config.beta_b(), &h)?;
    let now = entropies(rho_t)?;
    let then = entropies(reference)?;
    let i_now = now.s_a + now.s_b - now.s_ab;
    let i_then = then.s_a + then.s_b - then.s_ab;
    Ok(EnergyEntropyBalance {
        lhs: (config.beta_a() - config.beta_b()) * (now.e_a - then.e_a),
        rel_a: relative_entropy(&partial_trace(rho_t, Subsystem::A)?, &gibbs_a)?,
        rel_b: relative_entropy(&partial_trace(rho_t, Subsystem::B)?, &gibbs_b)?,
        d_i: i_now - i_then,
    })
}

/// Coefficient of performance of one pump cycle with the effective work
/// `W = T_A I0` spent on correlations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopReport {
    /// `Q_B / (T_A I0)`, optionally with the decoupling work added to `W`
    pub cop_ratio: f64,
    /// `T_B / (T_A - T_B)`; infinite for equal temperatures
    pub carnot: f64,
    pub satisfied: bool,
    /// set when the bound is trivial because `T_A == T_B`
    pub degenerate: bool,
}

/// COP of a completed cycle that consumed mutual information `i0`.
///
/// With `charge_decouple_work` the magnitude of `<V>` at the decoupling
/// instant is added to the work when it exceeds 1e-6.
pub fn cop_report(
    cycle: &CycleRecord,
    i0: f64,
    config: &PairConfig,
    charge_decouple_work: bool,
) -> Result<CopReport> {
    if i0.is_nan() || i0 < 0.0 {
        return Err(Error::Parameter {
            name: "i0",
            reason: format!("mutual information must be non-negative, got {i0}"),
        });
    }
    let mut work = config.t_a * i0;
    if charge_decouple_work && cycle.residual_v.abs() > 1e-6 {
        work += cycle.residual_v.abs();
    }
    let cop_ratio = if cycle.q_b_cycle == 0.0 {
        0.0
    } else if work > 0.0 {
        cycle.q_b_cycle / work
    } else {
        f64::INFINITY * cycle.q_b_cycle.signum()
    };
    let degenerate = config.t_a == config.t_b;
    let carnot = if degenerate {
        f64::INFINITY
    } else {
        config.t_b / (config.t_a - config.t_b)
    };
    Ok(CopReport {
        cop_ratio,
        carnot,
        satisfied: degenerate || cop_ratio <= carnot + 1e-9,
        degenerate,
    })
}
