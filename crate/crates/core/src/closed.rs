//! Isolated qubit pair: correlated initial states, Liouville-von Neumann
//! evolution and the closed-form unitary solution used as an oracle.

use std::f64::consts::PI;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::{
    concurrence, mutual_information, qubit_hamiltonian, DensityOperator, HermitianObservable,
    Subsystem, Tolerance, C64,
};

/// Physical parameters of the two-qubit problem.
///
/// Temperatures may be `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub t_a: f64,
    pub t_b: f64,
    /// Coupling magnitude.
    pub omega: f64,
    /// Phase of the coupling operator.
    pub phi_v: f64,
    /// Phase of the |01>-|10> coherence in the correlation matrix.
    pub phi_chi: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            t_a: 2.0,
            t_b: 1.0,
            omega: 0.1,
            phi_v: 0.0,
            phi_chi: PI / 2.0,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_nan() || v <= 0.0 {
        return Err(Error::Parameter {
            name,
            reason: format!("must be strictly positive, got {v}"),
        });
    }
    Ok(())
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

impl PairConfig {
    pub fn new(t_a: f64, t_b: f64, omega: f64, phi_v: f64, phi_chi: f64) -> Result<Self> {
        let cfg = Self {
            t_a,
            t_b,
            omega,
            phi_v,
            phi_chi,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config with a given phase mismatch `delta = phi_v - phi_chi` (`phi_v = 0`).
    pub fn with_delta(t_a: f64, t_b: f64, omega: f64, delta: f64) -> Result<Self> {
        Self::new(t_a, t_b, omega, 0.0, -delta)
    }

    pub fn validate(&self) -> Result<()> {
        positive("T_A", self.t_a)?;
        positive("T_B", self.t_b)?;
        positive("Omega", self.omega)?;
        if !self.phi_v.is_finite() || !self.phi_chi.is_finite() {
            return Err(Error::Parameter {
                name: "phi",
                reason: "phases must be finite".into(),
            });
        }
        Ok(())
    }

    pub fn beta_a(&self) -> f64 {
        1.0 / self.t_a
    }

    pub fn beta_b(&self) -> f64 {
        1.0 / self.t_b
    }

    /// `phi_v - phi_chi` in `(-pi, pi]`.
    pub fn delta(&self) -> f64 {
        wrap_angle(self.phi_v - self.phi_chi)
    }

    /// The same pair with the two temperatures exchanged.
    pub fn swapped_temperatures(&self) -> Self {
        Self {
            t_a: self.t_b,
            t_b: self.t_a,
            ..*self
        }
    }
}

/// Diagonal of the uncorrelated product of the two Gibbs states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsWeights {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
}

impl GibbsWeights {
    /// Weights of a product of two diagonal qubit states with ground
    /// populations `p_a`, `p_b`.
    pub fn from_ground_populations(p_a: f64, p_b: f64) -> Self {
        Self {
            l1: p_a * p_b,
            l2: p_a * (1.0 - p_b),
            l3: (1.0 - p_a) * p_b,
            l4: (1.0 - p_a) * (1.0 - p_b),
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.l1, self.l2, self.l3, self.l4]
    }

    /// Initial subspace energy difference `E_A - E_B` of the product state.
    pub fn sed0(&self) -> f64 {
        self.l3 - self.l2
    }

    /// Largest concurrence any feasible correlation matrix can reach.
    pub fn max_concurrence(&self) -> f64 {
        2.0 * self.l4.sqrt()
    }
}

/// Gibbs weights for the pair. `lambda_2` carries a division by `Z_A Z_B`
/// like the other three.
pub fn lambda_weights(config: &PairConfig) -> GibbsWeights {
    let (ba, bb) = (config.beta_a(), config.beta_b());
    let z = 4.0 * (ba / 2.0).cosh() * (bb / 2.0).cosh();
    GibbsWeights {
        l1: ((ba + bb) / 2.0).exp() / z,
        l2: ((ba - bb) / 2.0).exp() / z,
        l3: ((bb - ba) / 2.0).exp() / z,
        l4: (-(ba + bb) / 2.0).exp() / z,
    }
}

/// Traceless X-form correlation block added to the product Gibbs state.
///
/// Diagonal is `(chi11, -chi11, -chi11, chi11)` so both partial traces vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub chi11: f64,
    pub chi23: C64,
}

impl CorrelationMatrix {
    pub fn zero() -> Self {
        Self {
            chi11: 0.0,
            chi23: C64::new(0.0, 0.0),
        }
    }

    pub fn new(chi11: f64, magnitude: f64, phase: f64) -> Self {
        Self {
            chi11,
            chi23: C64::from_polar(magnitude, phase),
        }
    }

    pub fn to_matrix4(&self) -> Matrix4<C64> {
        let mut m = Matrix4::<C64>::zeros();
        let d = C64::new(self.chi11, 0.0);
        m[(0, 0)] = d;
        m[(1, 1)] = -d;
        m[(2, 2)] = -d;
        m[(3, 3)] = d;
        m[(1, 2)] = self.chi23;
        m[(2, 1)] = self.chi23.conj();
        m
    }

    /// Check positivity of `product + chi` in X-form.
    pub fn check_feasible(&self, weights: &GibbsWeights, tol: f64) -> Result<()> {
        let upper = weights.l2.min(weights.l3);
        if self.chi11 > upper + tol || self.chi11 < -weights.l4 - tol {
            return Err(Error::Infeasible(format!(
                "chi11 = {} outside [{}, {}]",
                self.chi11, -weights.l4, upper
            )));
        }
        let bound = ((weights.l2 - self.chi11) * (weights.l3 - self.chi11)).max(0.0).sqrt();
        if self.chi23.norm() > bound + tol {
            return Err(Error::Infeasible(format!(
                "|chi23| = {} exceeds {}",
                self.chi23.norm(),
                bound
            )));
        }
        Ok(())
    }

    /// X-state concurrence of `product + chi`.
    pub fn concurrence(&self, weights: &GibbsWeights) -> f64 {
        let floor = ((weights.l1 + self.chi11) * (weights.l4 + self.chi11)).max(0.0).sqrt();
        2.0 * (self.chi23.norm() - floor).max(0.0)
    }
}

/// Maximally entangling correlation matrix for the given weights.
pub fn optimal_chi_for(weights: &GibbsWeights, phi_chi: f64) -> CorrelationMatrix {
    CorrelationMatrix::new(-weights.l4, weights.l4.sqrt(), phi_chi)
}

pub fn optimal_chi(config: &PairConfig) -> CorrelationMatrix {
    optimal_chi_for(&lambda_weights(config), config.phi_chi)
}

pub fn product_matrix(weights: &GibbsWeights) -> Matrix4<C64> {
    let w = weights.as_array();
    Matrix4::from_fn(|i, j| {
        if i == j {
            C64::new(w[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// `rho_A^0 ⊗ rho_B^0 + chi`.
pub fn correlated_state(config: &PairConfig, chi: &CorrelationMatrix) -> Result<DensityOperator> {
    let weights = lambda_weights(config);
    chi.check_feasible(&weights, 1e-12)?;
    DensityOperator::from_matrix4(&(product_matrix(&weights) + chi.to_matrix4()))
}

/// The optimally correlated fuel state.
pub fn fuel_state(config: &PairConfig) -> Result<DensityOperator> {
    correlated_state(config, &optimal_chi(config))
}

/// Grid search for the most entangling feasible correlation matrix.
///
/// Scans `chi11` and `|chi23|^2` on a `grid_n x grid_n` grid spanning the
/// feasible region (endpoints included).
pub fn brute_force_max_concurrence(
    config: &PairConfig,
    grid_n: usize,
) -> Result<(f64, CorrelationMatrix)> {
    if grid_n < 2 {
        return Err(Error::Parameter {
            name: "grid_n",
            reason: "need at least two grid points".into(),
        });
    }
    let w = lambda_weights(config);
    let lo = -w.l4;
    let hi = w.l2.min(w.l3);
    if hi < lo {
        return Err(Error::Infeasible("empty feasible region".into()));
    }
    let mut best = (f64::NEG_INFINITY, CorrelationMatrix::zero());
    for i in 0..grid_n {
        let chi11 = lo + (hi - lo) * i as f64 / (grid_n - 1) as f64;
        let candidate = max_concurrence_on_slice(&w, chi11, grid_n, config.phi_chi);
        if candidate.0 > best.0 {
            best = candidate;
        }
    }
    Ok(best)
}

/// Grid search over `|chi23|^2` at fixed `chi11`.
pub fn brute_force_max_concurrence_at(
    config: &PairConfig,
    chi11: f64,
    grid_n: usize,
) -> Result<(f64, CorrelationMatrix)> {
    let w = lambda_weights(config);
    if chi11 < -w.l4 || chi11 > w.l2.min(w.l3) {
        return Err(Error::Infeasible(format!("chi11 = {chi11} is outside the feasible range")));
    }
    Ok(max_concurrence_on_slice(&w, chi11, grid_n.max(2), config.phi_chi))
}

fn max_concurrence_on_slice(
    w: &GibbsWeights,
    chi11: f64,
    grid_n: usize,
    phase: f64,
) -> (f64, CorrelationMatrix) {
    let y_max = ((w.l2 - chi11) * (w.l3 - chi11)).max(0.0);
    let mut best = (f64::NEG_INFINITY, CorrelationMatrix::zero());
    for j in 0..grid_n {
        let y = y_max * j as f64 / (grid_n - 1) as f64;
        let chi = CorrelationMatrix::new(chi11, y.sqrt(), phase);
        let c = chi.concurrence(w);
        if c > best.0 {
            best = (c, chi);
        }
    }
    best
}

/// `Omega (e^{i phi_v} |01><10| + h.c.)`.
pub fn interaction_matrix(config: &PairConfig) -> Matrix4<C64> {
    let mut v = Matrix4::<C64>::zeros();
    let c = C64::from_polar(config.omega, config.phi_v);
    v[(1, 2)] = c;
    v[(2, 1)] = c.conj();
    v
}

pub fn interaction_hamiltonian(config: &PairConfig) -> HermitianObservable {
    HermitianObservable::from_matrix4(&interaction_matrix(config)).expect("Hermitian by construction")
}

/// `H_A ⊗ I` and `I ⊗ H_B` for identical qubits.
pub fn local_hamiltonians() -> (Matrix4<C64>, Matrix4<C64>) {
    let h = qubit_hamiltonian();
    let a = h.embed(Subsystem::A).and_then(|o| o.to_matrix4());
    let b = h.embed(Subsystem::B).and_then(|o| o.to_matrix4());
    (a.expect("dim 4"), b.expect("dim 4"))
}

pub fn free_hamiltonian() -> Matrix4<C64> {
    let (a, b) = local_hamiltonians();
    a + b
}

pub fn total_hamiltonian(config: &PairConfig) -> Matrix4<C64> {
    free_hamiltonian() + interaction_matrix(config)
}

/// `(E_A, E_B)` of a two-qubit state.
pub fn local_energies(rho: &Matrix4<C64>) -> (f64, f64) {
    let (ha, hb) = local_hamiltonians();
    ((ha * rho).trace().re, (hb * rho).trace().re)
}

/// First-order coefficient of the SED: `-i Tr{(H_A - H_B)[V, chi]}`.
pub fn initial_sed_slope(config: &PairConfig, chi: &CorrelationMatrix) -> f64 {
    let (ha, hb) = local_hamiltonians();
    let v = interaction_matrix(config);
    let x = chi.to_matrix4();
    let comm = v * x - x * v;
    (C64::new(0.0, -1.0) * ((ha - hb) * comm).trace()).re
}

/// Amplitude `A` and phase `theta` with `SED(t) = A cos(2 Omega t + theta)`
/// for the optimally correlated initial state.
///
/// For `SED(0) = 0` the limit from positive `SED(0)` is used:
/// `A = C0 |sin delta|`, `theta = sign(sin delta) pi / 2`.
pub fn sed_amplitude_phase(config: &PairConfig) -> (f64, f64) {
    let w = lambda_weights(config);
    let d0 = w.sed0();
    let s = w.max_concurrence() * config.delta().sin();
    if d0 == 0.0 {
        if s == 0.0 {
            return (0.0, 0.0);
        }
        return (s.abs(), s.signum() * PI / 2.0);
    }
    let x = s / d0;
    (d0 * (1.0 + x * x).sqrt(), x.atan())
}

/// Closed-form SED of the optimally correlated pair.
pub fn exact_sed(config: &PairConfig, t: f64) -> f64 {
    let (amp, theta) = sed_amplitude_phase(config);
    amp * (2.0 * config.omega * t + theta).cos()
}

/// Time of the first SED maximum in `[0, pi / Omega)`; equals
/// `|theta| / (2 Omega)` for `T_A > T_B` and `delta < 0`.
pub fn first_sed_maximum_time(config: &PairConfig) -> f64 {
    let w = lambda_weights(config);
    let s = w.max_concurrence() * config.delta().sin();
    // SED = R cos(2 Omega t + phi) with R >= 0
    let phi = s.atan2(w.sed0());
    (-phi).rem_euclid(2.0 * PI) / (2.0 * config.omega)
}

/// Closed-form state of the optimally correlated pair at time `t`.
///
/// The |00> population is `lambda_1 - lambda_4` and |11> is empty for all
/// times; the |01>,|10> block oscillates at `2 Omega` with
/// `rho23 = e^{i phi_v}/2 [C0 cos(delta) - i (C0 sin(delta) cos(2 Omega t) + SED(0) sin(2 Omega t))]`.
pub fn exact_closed_state_matrix(config: &PairConfig, t: f64) -> Matrix4<C64> {
    let w = lambda_weights(config);
    let c0 = w.max_concurrence();
    let d0 = w.sed0();
    let delta = config.delta();
    let (cos2, sin2) = ((2.0 * config.omega * t).cos(), (2.0 * config.omega * t).sin());
    let mid = w.l2 + w.l3 + 2.0 * w.l4;
    let rho22 = 0.5 * (mid - d0 * cos2 + delta.sin() * c0 * sin2);
    let rho33 = 0.5 * (mid + d0 * cos2 - delta.sin() * c0 * sin2);
    let rho23 = C64::from_polar(0.5, config.phi_v)
        * C64::new(c0 * delta.cos(), -(delta.sin() * c0 * cos2 + d0 * sin2));
    let mut m = Matrix4::<C64>::zeros();
    m[(0, 0)] = C64::new(w.l1 - w.l4, 0.0);
    m[(1, 1)] = C64::new(rho22, 0.0);
    m[(2, 2)] = C64::new(rho33, 0.0);
    m[(1, 2)] = rho23;
    m[(2, 1)] = rho23.conj();
    m
}

pub fn exact_closed_state(config: &PairConfig, t: f64) -> Result<DensityOperator> {
    DensityOperator::from_matrix4(&exact_closed_state_matrix(config, t))
}

/// Sampled diagnostics of a trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SedTrace {
    pub times: Vec<f64>,
    pub sed: Vec<f64>,
    pub concurrence: Vec<f64>,
    pub mutual_information: Vec<f64>,
}

impl SedTrace {
    pub(crate) fn push(&mut self, t: f64, rho: &DensityOperator) -> Result<()> {
        let m = rho.to_matrix4()?;
        let (ea, eb) = local_energies(&m);
        self.times.push(t);
        self.sed.push(ea - eb);
        self.concurrence.push(concurrence(rho)?);
        self.mutual_information.push(mutual_information(rho)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the first sample that is a local maximum of the SED.
    pub fn first_sed_maximum(&self) -> Option<usize> {
        (1..self.sed.len().saturating_sub(1))
            .find(|&i| self.sed[i] >= self.sed[i - 1] && self.sed[i] > self.sed[i + 1])
    }
}

/// Output of a closed run.
#[derive(Debug, Clone)]
pub struct ClosedRun {
    pub trace: SedTrace,
    pub states: Vec<DensityOperator>,
}

/// Commutator right-hand side of `i d rho/dt = [H, rho]`.
#[inline]
pub(crate) fn lvn_rhs(h: &Matrix4<C64>, rho: &Matrix4<C64>) -> Matrix4<C64> {
    (h * rho - rho * h) * C64::new(0.0, -1.0)
}

pub(crate) fn rk4_lvn_step(h: &Matrix4<C64>, rho: &Matrix4<C64>, dt: f64) -> Matrix4<C64> {
    let half = C64::new(dt / 2.0, 0.0);
    let full = C64::new(dt, 0.0);
    let k1 = lvn_rhs(h, rho);
    let k2 = lvn_rhs(h, &(rho + k1 * half));
    let k3 = lvn_rhs(h, &(rho + k2 * half));
    let k4 = lvn_rhs(h, &(rho + k3 * full));
    rho + (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(dt / 6.0, 0.0)
}

/// Number of whole steps of size `dt` in `t_final`.
pub(crate) fn step_count(dt: f64, t_final: f64) -> Result<usize> {
    positive("dt", dt)?;
    if t_final.is_nan() || t_final < 0.0 {
        return Err(Error::Parameter {
            name: "t_final",
            reason: format!("must be non-negative, got {t_final}"),
        });
    }
    let n = (t_final / dt).round();
    if (n * dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
        return Err(Error::Parameter {
            name: "t_final",
            reason: format!("{t_final} is not a whole number of steps of {dt}"),
        });
    }
    Ok(n as usize)
}

/// Fixed-step RK4 integration of the closed pair.
///
/// States are recorded every `stride` steps (and at `t_final`).
pub fn integrate_lvn(
    config: &PairConfig,
    rho0: &DensityOperator,
    dt: f64,
    t_final: f64,
    stride: usize,
) -> Result<ClosedRun> {
    let limit = 0.01 / config.omega;
    if dt > limit {
        return Err(Error::StepSize { dt, limit });
    }
    let h = total_hamiltonian(config);
    integrate_with_hamiltonian(&h, rho0, dt, t_final, stride)
}

/// Same as [`integrate_lvn`] for an arbitrary 4x4 Hamiltonian.
pub fn integrate_with_hamiltonian(
    h: &Matrix4<C64>,
    rho0: &DensityOperator,
    dt: f64,
    t_final: f64,
    stride: usize,
) -> Result<ClosedRun> {
    let n_steps = step_count(dt, t_final)?;
    let stride = stride.max(1);
    let mut rho = rho0.to_matrix4()?;
    let mut trace = SedTrace::default();
    let mut states = Vec::with_capacity(n_steps / stride + 2);
    trace.push(0.0, rho0)?;
    states.push(rho0.clone());
    let tol = Tolerance::uniform(1e-10);
    for step in 1..=n_steps {
        rho = rk4_lvn_step(h, &rho, dt);
        if step % stride == 0 || step == n_steps {
            let t = step as f64 * dt;
            let state = DensityOperator::from_matrix4(&rho)
                .or_else(|_| {
                    DensityOperator::with_tolerance(
                        nalgebra::DMatrix::from_iterator(4, 4, rho.iter().copied()),
                        tol,
                    )
                })
                .map_err(|e| Error::Invariant(format!("at t = {t}: {e}")))?;
            trace.push(t, &state)?;
            states.push(state);
        }
    }
    Ok(ClosedRun { trace, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{concurrence, gibbs_state, partial_trace};
    use approx::assert_abs_diff_eq;

    fn paper_pair(delta: f64) -> PairConfig {
        PairConfig::with_delta(2.0, 1.0, 0.1, delta).unwrap()
    }

    #[test]
    fn weights_symmetric_and_infinite_temperature() {
        let w = lambda_weights(&PairConfig::with_delta(1.5, 1.5, 0.1, 0.0).unwrap());
        assert_abs_diff_eq!(w.l2, w.l3, epsilon = 1e-16);
        let w = lambda_weights(&PairConfig::with_delta(f64::INFINITY, f64::INFINITY, 0.1, 0.0).unwrap());
        for l in w.as_array() {
            assert_abs_diff_eq!(l, 0.25, epsilon = 1e-16);
        }
    }

    #[test]
    fn weights_match_kronecker_of_gibbs_states() {
        let cfg = paper_pair(0.0);
        let h = qubit_hamiltonian();
        let prod = gibbs_state(0.5, &h).unwrap().tensor(&gibbs_state(1.0, &h).unwrap());
        let w = lambda_weights(&cfg).as_array();
        for i in 0..4 {
            assert_abs_diff_eq!(prod.matrix()[(i, i)].re, w[i], epsilon = 1e-15);
        }
        let expected_l4 = (-0.75f64).exp() / (4.0 * 0.25f64.cosh() * 0.5f64.cosh());
        assert_abs_diff_eq!(w[3], expected_l4, epsilon = 1e-15);
        assert_abs_diff_eq!(w[3], 0.1015, epsilon = 5e-5);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(w[0] >= w[1] && w[1] >= w[3] && w[0] >= w[2] && w[2] >= w[3]);
    }

    #[test]
    fn optimal_chi_keeps_gibbs_marginals() {
        let cfg = paper_pair(-PI / 2.0);
        let rho = fuel_state(&cfg).unwrap();
        let h = qubit_hamiltonian();
        let ga = gibbs_state(cfg.beta_a(), &h).unwrap();
        let gb = gibbs_state(cfg.beta_b(), &h).unwrap();
        assert!(partial_trace(&rho, Subsystem::A).unwrap().max_abs_diff(&ga) < 1e-15);
        assert!(partial_trace(&rho, Subsystem::B).unwrap().max_abs_diff(&gb) < 1e-15);
    }

    #[test]
    fn optimal_chi_concurrence() {
        let cfg = paper_pair(-PI / 2.0);
        let w = lambda_weights(&cfg);
        let c = concurrence(&fuel_state(&cfg).unwrap()).unwrap();
        assert_abs_diff_eq!(c, 2.0 * w.l4.sqrt(), epsilon = 1e-10);
        assert_abs_diff_eq!(c, 0.637, epsilon = 1e-3);
        let hot = PairConfig::with_delta(f64::INFINITY, f64::INFINITY, 0.1, 0.3).unwrap();
        assert_abs_diff_eq!(concurrence(&fuel_state(&hot).unwrap()).unwrap(), 1.0, epsilon = 1e-7);
    }

    #[test]
    fn optimal_chi_phase() {
        let cfg = PairConfig::new(2.0, 1.0, 0.1, 0.4, 1.1).unwrap();
        let chi = optimal_chi(&cfg);
        assert_abs_diff_eq!(chi.chi23.arg(), 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.delta(), -0.7, epsilon = 1e-15);
    }

    #[test]
    fn brute_force_slices() {
        let cfg = paper_pair(-PI / 2.0);
        let w = lambda_weights(&cfg);
        let (c, _) = brute_force_max_concurrence_at(&cfg, 0.0, 400).unwrap();
        let expected = 2.0 * ((w.l2 * w.l3).sqrt() - (w.l1 * w.l4).sqrt()).max(0.0);
        assert_abs_diff_eq!(c, expected, epsilon = 1e-12);
        let (c, _) = brute_force_max_concurrence(&cfg, 2).unwrap();
        assert!(c <= w.max_concurrence() + 1e-12);
        assert!(brute_force_max_concurrence(&cfg, 1).is_err());
    }

    #[test]
    fn infeasible_chi_rejected() {
        let cfg = paper_pair(0.0);
        let w = lambda_weights(&cfg);
        let chi = CorrelationMatrix::new(-w.l4, 2.0 * w.l4.sqrt(), 0.0);
        assert!(matches!(correlated_state(&cfg, &chi), Err(Error::Infeasible(_))));
        let chi = CorrelationMatrix::new(-2.0 * w.l4, 0.0, 0.0);
        assert!(matches!(chi.check_feasible(&w, 0.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn interaction_forms() {
        let xy = interaction_matrix(&PairConfig::new(2.0, 1.0, 0.1, 0.0, 0.0).unwrap());
        assert_abs_diff_eq!(xy[(1, 2)].re, 0.1, epsilon = 1e-16);
        assert_abs_diff_eq!(xy[(2, 1)].re, 0.1, epsilon = 1e-16);
        assert_eq!(xy[(1, 2)].im, 0.0);
        let dm = interaction_matrix(&PairConfig::new(2.0, 1.0, 0.1, PI / 2.0, 0.0).unwrap());
        assert_abs_diff_eq!(dm[(1, 2)].im, 0.1, epsilon = 1e-16);
        assert_abs_diff_eq!(dm[(2, 1)].im, -0.1, epsilon = 1e-16);
        assert_abs_diff_eq!(dm[(1, 2)].re, 0.0, epsilon = 1e-16);
        let nonzero = dm.iter().filter(|z| z.norm() > 0.0).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn coupling_energy_vanishes_at_quarter_phase() {
        for delta in [PI / 2.0, -PI / 2.0] {
            let cfg = paper_pair(delta);
            let rho = fuel_state(&cfg).unwrap();
            assert_abs_diff_eq!(rho.expect(&interaction_hamiltonian(&cfg)), 0.0, epsilon = 1e-15);
        }
        let cfg = paper_pair(0.0);
        let rho = fuel_state(&cfg).unwrap();
        let c0 = lambda_weights(&cfg).max_concurrence();
        assert_abs_diff_eq!(rho.expect(&interaction_hamiltonian(&cfg)), cfg.omega * c0, epsilon = 1e-15);
    }

    #[test]
    fn slope_zero_cases() {
        let cfg = paper_pair(-PI / 2.0);
        assert_eq!(initial_sed_slope(&cfg, &CorrelationMatrix::zero()), 0.0);
        let cfg = paper_pair(0.0);
        assert_abs_diff_eq!(initial_sed_slope(&cfg, &optimal_chi(&cfg)), 0.0, epsilon = 1e-16);
    }

    #[test]
    fn slope_matches_closed_form() {
        for delta in [-PI / 2.0, -0.3, 0.7, 2.0] {
            let cfg = paper_pair(delta);
            let (amp, theta) = sed_amplitude_phase(&cfg);
            let slope = initial_sed_slope(&cfg, &optimal_chi(&cfg));
            assert_abs_diff_eq!(slope, -2.0 * cfg.omega * amp * theta.sin(), epsilon = 1e-10);
        }
    }

    #[test]
    fn exact_state_at_zero_is_initial_state() {
        let cfg = PairConfig::new(2.0, 1.0, 0.1, 0.3, 1.2).unwrap();
        let rho = exact_closed_state(&cfg, 0.0).unwrap();
        assert!(rho.max_abs_diff(&fuel_state(&cfg).unwrap()) < 1e-15);
    }

    #[test]
    fn exact_state_half_period_swap() {
        let cfg = paper_pair(0.0);
        let t = PI / (2.0 * cfg.omega);
        let (ea, eb) = local_energies(&exact_closed_state_matrix(&cfg, t));
        assert_abs_diff_eq!(ea - eb, -lambda_weights(&cfg).sed0(), epsilon = 1e-14);
    }

    #[test]
    fn exact_state_spectrum_constant() {
        let cfg = paper_pair(-PI / 2.0);
        let ev0 = exact_closed_state(&cfg, 0.0).unwrap().eigenvalues();
        for t in [1.0, 7.3, 20.0, 41.0] {
            let ev = exact_closed_state(&cfg, t).unwrap().eigenvalues();
            for (a, b) in ev0.iter().zip(&ev) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn exact_sed_matches_exact_state() {
        for (ta, tb) in [(2.0, 1.0), (1.0, 2.0), (1.5, 1.5)] {
            for delta in [-PI / 2.0, 0.0, 1.0, -2.5] {
                let cfg = PairConfig::with_delta(ta, tb, 0.1, delta).unwrap();
                for t in [0.0, 3.3, 7.0, 15.7, 30.0] {
                    let (ea, eb) = local_energies(&exact_closed_state_matrix(&cfg, t));
                    assert_abs_diff_eq!(exact_sed(&cfg, t), ea - eb, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn sed_without_entanglement_is_plain_cosine() {
        let cfg = paper_pair(0.0);
        let d0 = lambda_weights(&cfg).sed0();
        for t in [0.0, 2.0, 9.0] {
            assert_abs_diff_eq!(exact_sed(&cfg, t), d0 * (2.0 * cfg.omega * t).cos(), epsilon = 1e-15);
        }
    }

    #[test]
    fn anomalous_first_maximum() {
        let cfg = paper_pair(-PI / 2.0);
        let tau = first_sed_maximum_time(&cfg);
        let w = lambda_weights(&cfg);
        let d0 = 0.5 * ((0.5f64).tanh() - (0.25f64).tanh());
        assert_abs_diff_eq!(w.sed0(), d0, epsilon = 1e-15);
        let expected = (-w.max_concurrence() / d0).atan().abs() / 0.2;
        assert_abs_diff_eq!(tau, expected, epsilon = 1e-12);
        assert!(exact_sed(&cfg, tau) > d0);
        assert!(exact_sed(&cfg, tau) >= exact_sed(&cfg, tau - 1e-3));
        assert!(exact_sed(&cfg, tau) >= exact_sed(&cfg, tau + 1e-3));
    }

    #[test]
    fn anomalous_slope_agrees_with_finite_difference() {
        let cfg = paper_pair(-PI / 2.0);
        let h = 1e-4;
        let fd = (exact_sed(&cfg, h) - exact_sed(&cfg, -h)) / (2.0 * h);
        let slope = initial_sed_slope(&cfg, &optimal_chi(&cfg));
        assert!(slope > 0.0);
        assert_abs_diff_eq!(slope, fd, epsilon = 1e-6);
    }

    #[test]
    fn lvn_step_guard() {
        let cfg = paper_pair(0.0);
        let rho = fuel_state(&cfg).unwrap();
        assert!(matches!(
            integrate_lvn(&cfg, &rho, 0.2, 1.0, 1),
            Err(Error::StepSize { .. })
        ));
    }

    #[test]
    fn lvn_without_coupling_keeps_populations() {
        let cfg = paper_pair(-PI / 2.0);
        let rho0 = fuel_state(&cfg).unwrap();
        let run = integrate_with_hamiltonian(&free_hamiltonian(), &rho0, 0.01, 5.0, 50).unwrap();
        let last = run.states.last().unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(last.matrix()[(i, i)].re, rho0.matrix()[(i, i)].re, epsilon = 1e-13);
        }
        for s in &run.trace.sed {
            assert_abs_diff_eq!(*s, run.trace.sed[0], epsilon = 1e-13);
        }
        // |01><10| is degenerate under H_A + H_B, so that coherence is frozen too
        assert!((last.matrix()[(1, 2)] - rho0.matrix()[(1, 2)]).norm() < 1e-13);
    }

    #[test]
    fn lvn_coherence_rotates_at_splitting() {
        // |00> + |10> on qubit A: coherence rho_{00,10} picks up e^{i t}
        let s = C64::new(1.0, 0.0);
        let z = C64::new(0.0, 0.0);
        let rho0 = DensityOperator::pure(&[s, z, s, z]).unwrap();
        let t = 2.0;
        let run = integrate_with_hamiltonian(&free_hamiltonian(), &rho0, 1e-3, t, 2000).unwrap();
        let c = run.states.last().unwrap().matrix()[(0, 2)];
        let expected = C64::from_polar(0.5, t);
        assert!((c - expected).norm() < 1e-12);
    }

    #[test]
    fn normal_exchange_never_exceeds_initial_sed() {
        let cfg = paper_pair(0.0);
        let run = integrate_lvn(&cfg, &fuel_state(&cfg).unwrap(), 1e-2, 80.0, 10).unwrap();
        let s0 = run.trace.sed[0];
        assert!(run.trace.sed.iter().all(|&s| s <= s0 + 1e-12));
    }

    #[test]
    fn trace_first_maximum_detection() {
        let trace = SedTrace {
            times: vec![0.0, 1.0, 2.0, 3.0],
            sed: vec![0.0, 1.0, 0.5, 2.0],
            concurrence: vec![0.0; 4],
            mutual_information: vec![0.0; 4],
        };
        assert_eq!(trace.first_sed_maximum(), Some(1));
    }
}
