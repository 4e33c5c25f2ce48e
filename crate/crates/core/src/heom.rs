//! Hierarchical equations of motion for the qubit pair, each qubit coupled
//! to its own Drude-Lorentz bosonic bath.
//!
//! Bath correlation functions are expanded as `C(t) = sum_k c_k e^{-nu_k t}`
//! with the Drude pole and `K` Matsubara poles; the remaining Matsubara tail
//! enters as a Markovian double commutator. Auxiliary density operators
//! (ADOs) are stored rescaled by `prod_k sqrt(n_k! |c_k|^{n_k})` so that all
//! tiers stay of comparable magnitude.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed::{free_hamiltonian, interaction_matrix, local_energies, step_count, PairConfig, SedTrace};
use crate::error::{Error, Result};
use crate::qstate::{DensityOperator, Subsystem, Tolerance, C64};

pub type Mat4 = Matrix4<C64>;

const I: C64 = C64::new(0.0, 1.0);
const MINUS_I: C64 = C64::new(0.0, -1.0);

/// Default cap on the number of ADOs; `QCORR_PUMP_CAP` overrides it in the CLI.
pub const DEFAULT_ADO_CAP: usize = 200_000;

/// System operator through which a qubit couples to its bath.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingOperator {
    /// Transverse coupling; thermalizes the qubit.
    #[default]
    SigmaX,
    /// Longitudinal coupling; only dephases.
    SigmaZ,
}

/// One Drude-Lorentz bath, `J(w) = 2 kappa gamma_c w / (gamma_c^2 + w^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathSpec {
    pub kappa: f64,
    pub gamma_c: f64,
    pub temperature: f64,
    pub n_matsubara: usize,
    #[serde(default)]
    pub coupling: CouplingOperator,
}

impl BathSpec {
    pub fn new(kappa: f64, gamma_c: f64, temperature: f64, n_matsubara: usize) -> Result<Self> {
        let spec = Self {
            kappa,
            gamma_c,
            temperature,
            n_matsubara,
            coupling: CouplingOperator::SigmaX,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `kappa = 0` is accepted and decouples the bath.
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Parameter {
                name: "kappa",
                reason: format!("must be a non-negative number, got {}", self.kappa),
            });
        }
        if !(self.gamma_c > 0.0 && self.gamma_c.is_finite()) {
            return Err(Error::Parameter {
                name: "gamma_c",
                reason: format!("must be positive, got {}", self.gamma_c),
            });
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Parameter {
                name: "temperature",
                reason: format!("must be positive and finite, got {}", self.temperature),
            });
        }
        let ratio = self.gamma_c / (2.0 * PI * self.temperature);
        if (ratio - ratio.round()).abs() < 1e-9 {
            return Err(Error::Parameter {
                name: "gamma_c",
                reason: "coincides with a Matsubara frequency".into(),
            });
        }
        Ok(())
    }

    pub fn with_coupling(self, coupling: CouplingOperator) -> Self {
        Self { coupling, ..self }
    }

    /// Spectral density `J(w)`.
    pub fn spectral_density(&self, w: f64) -> f64 {
        2.0 * self.kappa * self.gamma_c * w / (self.gamma_c * self.gamma_c + w * w)
    }

    /// Highest decay rate kept in the expansion.
    pub fn fastest_rate(&self) -> f64 {
        self.gamma_c.max(2.0 * PI * self.n_matsubara as f64 * self.temperature)
    }
}

/// One term `c e^{-nu t}` of a bath correlation function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTerm {
    pub nu: f64,
    pub coef: C64,
}

/// Drude pole plus `n_matsubara` Matsubara terms, and the Markovian weight
/// of the truncated Matsubara tail.
pub fn correlation_terms(bath: &BathSpec) -> (Vec<ExpTerm>, f64) {
    let (kappa, gamma, temp) = (bath.kappa, bath.gamma_c, bath.temperature);
    let cot = 1.0 / (gamma / (2.0 * temp)).tan();
    let mut terms = vec![ExpTerm {
        nu: gamma,
        coef: C64::new(kappa * gamma * cot, -kappa * gamma),
    }];
    // full tail sum_{j>=1} c_j / nu_j in closed form
    let mut tail = 2.0 * kappa * temp / gamma - kappa * cot;
    for j in 1..=bath.n_matsubara {
        let nu = 2.0 * PI * j as f64 * temp;
        let c = 4.0 * kappa * gamma * nu * temp / (nu * nu - gamma * gamma);
        tail -= c / nu;
        terms.push(ExpTerm {
            nu,
            coef: C64::new(c, 0.0),
        });
    }
    (terms, tail)
}

/// Whether the tier-`L` ADOs are closed with a time-local estimate of tier `L+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminator {
    /// Tier `L+1` is dropped.
    None,
    /// Tier `L+1` is replaced by its adiabatic (Markovian) value.
    #[default]
    TimeLocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeomOptions {
    pub depth: usize,
    pub terminator: Terminator,
    pub ado_cap: usize,
    /// Derivative evaluation switches to rayon at this many ADOs.
    pub parallel_min: usize,
}

impl Default for HeomOptions {
    fn default() -> Self {
        Self {
            depth: 4,
            terminator: Terminator::TimeLocal,
            ado_cap: DEFAULT_ADO_CAP,
            parallel_min: 512,
        }
    }
}

impl HeomOptions {
    pub fn with_depth(depth: usize) -> Self {
        Self {
            depth,
            ..Self::default()
        }
    }
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return None;
        }
    }
    Some(acc as usize)
}

/// Multi-index bookkeeping: every `n` with `|n| <= depth`, ordered by tier.
#[derive(Debug, Clone)]
pub struct HierarchyIndex {
    depth: usize,
    n_modes: usize,
    labels: Vec<u8>,
    tiers: Vec<usize>,
    lookup: HashMap<Vec<u8>, usize>,
}

impl HierarchyIndex {
    pub fn new(n_modes: usize, depth: usize, cap: usize) -> Result<Self> {
        let size = binomial(n_modes + depth, depth).unwrap_or(usize::MAX);
        if size > cap {
            return Err(Error::ResourceCap { size, cap });
        }
        if depth > u8::MAX as usize {
            return Err(Error::Parameter {
                name: "depth",
                reason: "too deep".into(),
            });
        }
        let mut labels = Vec::with_capacity(size * n_modes);
        let mut tiers = Vec::with_capacity(size);
        let mut current = vec![0u8; n_modes];
        for tier in 0..=depth {
            fill_tier(&mut current, 0, tier, &mut |n| {
                labels.extend_from_slice(n);
                tiers.push(tier);
            });
        }
        let lookup = tiers
            .iter()
            .enumerate()
            .map(|(i, _)| (labels[i * n_modes..(i + 1) * n_modes].to_vec(), i))
            .collect();
        Ok(Self {
            depth,
            n_modes,
            labels,
            tiers,
            lookup,
        })
    }

    pub fn len(&self) -> usize {
        self.tiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiers.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn label(&self, i: usize) -> &[u8] {
        &self.labels[i * self.n_modes..(i + 1) * self.n_modes]
    }

    pub fn tier(&self, i: usize) -> usize {
        self.tiers[i]
    }

    pub fn position(&self, label: &[u8]) -> Option<usize> {
        self.lookup.get(label).copied()
    }
}

fn fill_tier(current: &mut [u8], mode: usize, remaining: usize, emit: &mut impl FnMut(&[u8])) {
    if mode == current.len() - 1 {
        current[mode] = remaining as u8;
        emit(current);
        current[mode] = 0;
        return;
    }
    for k in (0..=remaining).rev() {
        current[mode] = k as u8;
        fill_tier(current, mode + 1, remaining - k, emit);
    }
    current[mode] = 0;
}

/// Coupling operator acting on one qubit of the pair.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SiteOperator {
    kind: CouplingOperator,
    mask: usize,
}

impl SiteOperator {
    fn new(kind: CouplingOperator, site: Subsystem) -> Self {
        let mask = match site {
            Subsystem::A => 2,
            Subsystem::B => 1,
        };
        Self { kind, mask }
    }

    fn sign(&self, i: usize) -> f64 {
        if i & self.mask == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn matrix(&self) -> Mat4 {
        Mat4::from_fn(|i, j| match self.kind {
            CouplingOperator::SigmaX if i ^ self.mask == j => C64::new(1.0, 0.0),
            CouplingOperator::SigmaZ if i == j => C64::new(self.sign(i), 0.0),
            _ => C64::new(0.0, 0.0),
        })
    }

    /// `Q x`
    #[inline]
    fn left(&self, x: &Mat4) -> Mat4 {
        match self.kind {
            CouplingOperator::SigmaX => Mat4::from_fn(|i, j| x[(i ^ self.mask, j)]),
            CouplingOperator::SigmaZ => Mat4::from_fn(|i, j| x[(i, j)] * self.sign(i)),
        }
    }

    /// `x Q`
    #[inline]
    fn right(&self, x: &Mat4) -> Mat4 {
        match self.kind {
            CouplingOperator::SigmaX => Mat4::from_fn(|i, j| x[(i, j ^ self.mask)]),
            CouplingOperator::SigmaZ => Mat4::from_fn(|i, j| x[(i, j)] * self.sign(j)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Mode {
    bath: usize,
    nu: f64,
    coef: C64,
}

#[derive(Debug, Clone, Copy)]
struct UpLink {
    target: u32,
    bath: u8,
    weight: f64,
}

#[derive(Debug, Clone, Copy)]
struct DownLink {
    target: u32,
    bath: u8,
    /// multiplies `Q rho` (left) and `rho Q` (right)
    left: C64,
    right: C64,
}

/// Precomputed couplings of one ADO to its neighbours.
#[derive(Debug, Clone)]
struct AdoKernel {
    damping: f64,
    markov: [C64; 2],
    up: Vec<UpLink>,
    down: Vec<DownLink>,
}

#[derive(Debug, Clone, Copy)]
struct FirstTier {
    target: u32,
    bath: u8,
    norm: f64,
}

/// Full HEOM state: all ADOs plus heat bookkeeping.
#[derive(Debug, Clone)]
pub struct HierarchyState {
    pub time: f64,
    ados: Vec<Mat4>,
    index: Arc<HierarchyIndex>,
    /// integral of the system-side energy flux from each bath
    sys_heat: [f64; 2],
    /// system-bath interaction energy that counts as the zero of heat
    interaction_ref: [f64; 2],
}

impl HierarchyState {
    pub fn depth(&self) -> usize {
        self.index.depth()
    }

    pub fn index(&self) -> &HierarchyIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.ados.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ados.is_empty()
    }

    pub fn ados(&self) -> &[Mat4] {
        &self.ados
    }

    /// Physical reduced state of the pair (ADO 0).
    pub fn rho(&self) -> &Mat4 {
        &self.ados[0]
    }

    /// ADO 0 validated with the relaxed tolerances used for dissipative runs.
    pub fn density(&self) -> Result<DensityOperator> {
        let m = DMatrix::from_iterator(4, 4, self.ados[0].iter().copied());
        DensityOperator::with_tolerance(m, RELAXED)
    }

}

/// Tolerance for ADO 0: Hermiticity and trace to 1e-8, eigenvalues to -1e-6.
pub const RELAXED: Tolerance = Tolerance {
    hermitian: 1e-8,
    trace: 1e-8,
    positivity: 1e-6,
};

/// The HEOM generator for a given pair and pair of baths.
#[derive(Debug, Clone)]
pub struct Heom {
    config: PairConfig,
    baths: [BathSpec; 2],
    index: Arc<HierarchyIndex>,
    options: HeomOptions,
    ops: [SiteOperator; 2],
    residual: [f64; 2],
    kernels: Vec<AdoKernel>,
    first_tier: Vec<FirstTier>,
    coupled: bool,
    h_sys: Mat4,
    /// nonzero entries `(row, col, -i h)` of `H_S`
    h_terms: Vec<(usize, usize, C64)>,
    /// `-i [H_S, Q_b]`, contracted with the bath force for the energy flux
    flux_ops: [Mat4; 2],
}

impl Heom {
    pub fn new(config: &PairConfig, bath_a: &BathSpec, bath_b: &BathSpec, options: HeomOptions) -> Result<Self> {
        config.validate()?;
        bath_a.validate()?;
        bath_b.validate()?;
        if options.depth < 1 {
            return Err(Error::Parameter {
                name: "depth",
                reason: "hierarchy depth must be at least 1".into(),
            });
        }
        let baths = [*bath_a, *bath_b];
        let mut modes = Vec::new();
        let mut residual = [0.0; 2];
        for (b, bath) in baths.iter().enumerate() {
            let (terms, tail) = correlation_terms(bath);
            residual[b] = tail;
            modes.extend(terms.into_iter().map(|t| Mode {
                bath: b,
                nu: t.nu,
                coef: t.coef,
            }));
        }
        let index = Arc::new(HierarchyIndex::new(modes.len(), options.depth, options.ado_cap)?);
        let kernels = (0..index.len())
            .map(|i| build_kernel(&index, i, &modes, residual, options.terminator))
            .collect();
        let first_tier = (0..index.len())
            .filter(|&i| index.tier(i) == 1)
            .map(|i| {
                let k = index.label(i).iter().position(|&n| n == 1).expect("tier 1");
                FirstTier {
                    target: i as u32,
                    bath: modes[k].bath as u8,
                    norm: modes[k].coef.norm().sqrt(),
                }
            })
            .collect();
        let ops = [
            SiteOperator::new(bath_a.coupling, Subsystem::A),
            SiteOperator::new(bath_b.coupling, Subsystem::B),
        ];
        let mut heom = Self {
            config: *config,
            baths,
            index,
            options,
            ops,
            residual,
            kernels,
            first_tier,
            coupled: true,
            h_sys: Mat4::zeros(),
            h_terms: Vec::new(),
            flux_ops: [Mat4::zeros(); 2],
        };
        heom.set_coupled(true);
        Ok(heom)
    }

    /// Switch the qubit-qubit interaction on or off (instantaneous quench).
    pub fn set_coupled(&mut self, coupled: bool) {
        self.coupled = coupled;
        self.h_sys = free_hamiltonian();
        if coupled {
            self.h_sys += interaction_matrix(&self.config);
        }
        self.h_terms.clear();
        for c in 0..4 {
            for r in 0..4 {
                let h = self.h_sys[(r, c)];
                if h != C64::new(0.0, 0.0) {
                    self.h_terms.push((r, c, h * MINUS_I));
                }
            }
        }
        for b in 0..2 {
            let q = self.ops[b].matrix();
            self.flux_ops[b] = (self.h_sys * q - q * self.h_sys) * MINUS_I;
        }
    }

    pub fn with_coupled(mut self, coupled: bool) -> Self {
        self.set_coupled(coupled);
        self
    }

    pub fn is_coupled(&self) -> bool {
        self.coupled
    }

    pub fn config(&self) -> &PairConfig {
        &self.config
    }

    pub fn baths(&self) -> &[BathSpec; 2] {
        &self.baths
    }

    pub fn options(&self) -> &HeomOptions {
        &self.options
    }

    pub fn n_ados(&self) -> usize {
        self.index.len()
    }

    pub fn system_hamiltonian(&self) -> &Mat4 {
        &self.h_sys
    }

    /// Largest step accepted by [`Heom::step`].
    pub fn max_step(&self) -> f64 {
        let mut limit = 0.01 / self.config.omega;
        for bath in &self.baths {
            limit = limit.min(0.1 / bath.gamma_c).min(0.1 / bath.fastest_rate());
        }
        limit
    }

    /// Hierarchy with `rho0` in ADO 0 and every other ADO zero.
    pub fn initial_state(&self, rho0: &DensityOperator) -> Result<HierarchyState> {
        let mut ados = vec![Mat4::zeros(); self.index.len()];
        ados[0] = rho0.to_matrix4()?;
        Ok(HierarchyState {
            time: 0.0,
            ados,
            index: Arc::clone(&self.index),
            sys_heat: [0.0; 2],
            interaction_ref: [0.0; 2],
        })
    }

    /// `Tr(Q_b X_b)` for each bath, where `X_b` is the bath force.
    pub fn interaction_energy(&self, state: &HierarchyState) -> [f64; 2] {
        let mut force = [Mat4::zeros(); 2];
        for f in &self.first_tier {
            force[f.bath as usize] += state.ados[f.target as usize] * C64::new(f.norm, 0.0);
        }
        [0, 1].map(|b| (self.ops[b].left(&force[b])).trace().re)
    }

    /// Cumulative heat that has left each bath since the start.
    pub fn heat(&self, state: &HierarchyState) -> [f64; 2] {
        let e = self.interaction_energy(state);
        [0, 1].map(|b| state.sys_heat[b] + e[b] - state.interaction_ref[b])
    }

    /// Make the current state the zero of heat for both baths.
    pub fn reset_heat(&self, state: &mut HierarchyState) {
        state.sys_heat = [0.0; 2];
        state.interaction_ref = self.interaction_energy(state);
    }

    /// Replace ADO 0 by `rho` (an external, system-only operation).
    ///
    /// With `reset_ados` the higher tiers are cleared as well; the change of
    /// system-bath interaction energy that causes is booked as work, not heat.
    pub fn replace_system_state(&self, state: &mut HierarchyState, rho: &Mat4, reset_ados: bool) {
        let before = self.interaction_energy(state);
        state.ados[0] = *rho;
        if reset_ados {
            for a in state.ados.iter_mut().skip(1) {
                *a = Mat4::zeros();
            }
        }
        let after = self.interaction_energy(state);
        for b in 0..2 {
            state.interaction_ref[b] += after[b] - before[b];
        }
    }

    #[inline]
    fn ado_rhs(&self, i: usize, ados: &[Mat4]) -> Mat4 {
        let kernel = &self.kernels[i];
        let rho = &ados[i];
        let mut acc = rho * C64::new(-kernel.damping, 0.0);
        // -i [H_S, rho] from the few nonzero entries of H_S
        for &(r, c, h) in &self.h_terms {
            for j in 0..4 {
                acc[(r, j)] += h * rho[(c, j)];
                acc[(j, c)] -= rho[(j, r)] * h;
            }
        }
        let mut up = [Mat4::zeros(); 2];
        let mut down_l = [Mat4::zeros(); 2];
        let mut down_r = [Mat4::zeros(); 2];
        let mut has_up = [false; 2];
        let mut has_down = [false; 2];
        for link in &kernel.up {
            let b = link.bath as usize;
            up[b] += ados[link.target as usize] * C64::new(link.weight, 0.0);
            has_up[b] = true;
        }
        for link in &kernel.down {
            let b = link.bath as usize;
            let src = &ados[link.target as usize];
            down_l[b] += src * link.left;
            down_r[b] += src * link.right;
            has_down[b] = true;
        }
        for b in 0..2 {
            let m = kernel.markov[b];
            let has_markov = m != C64::new(0.0, 0.0);
            if !(has_up[b] || has_down[b] || has_markov) {
                continue;
            }
            let q = &self.ops[b];
            // -i[Q, S] - i(Q D_l - D_r Q) - [Q, m Q rho - m* rho Q]
            let mut left = (up[b] + down_l[b]) * MINUS_I;
            let mut right = (up[b] + down_r[b]) * I;
            if has_markov {
                let mixed = q.left(rho) * m - q.right(rho) * m.conj();
                left -= mixed;
                right += mixed;
            }
            acc += q.left(&left) + q.right(&right);
        }
        acc
    }

    /// Time derivative of every ADO; returns the system-side energy flux
    /// from each bath.
    fn derivative(&self, ados: &[Mat4], out: &mut [Mat4]) -> [f64; 2] {
        if ados.len() >= self.options.parallel_min {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(i, o)| *o = self.ado_rhs(i, ados));
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = self.ado_rhs(i, ados);
            }
        }
        self.energy_flux(ados)
    }

    fn energy_flux(&self, ados: &[Mat4]) -> [f64; 2] {
        let mut force = [Mat4::zeros(); 2];
        for f in &self.first_tier {
            force[f.bath as usize] += ados[f.target as usize] * C64::new(f.norm, 0.0);
        }
        let rho = &ados[0];
        [0, 1].map(|b| {
            let q = &self.ops[b];
            let mut x = force[b];
            if self.residual[b] != 0.0 {
                x += (q.left(rho) - q.right(rho)) * C64::new(0.0, -self.residual[b]);
            }
            trace_product(&self.flux_ops[b], &x)
        })
    }

    /// Instantaneous heat current leaving each bath.
    pub fn heat_currents(&self, state: &HierarchyState) -> (f64, f64) {
        let mut out = vec![Mat4::zeros(); state.ados.len()];
        let flux = self.derivative(&state.ados, &mut out);
        let mut force_rate = [Mat4::zeros(); 2];
        for f in &self.first_tier {
            force_rate[f.bath as usize] += out[f.target as usize] * C64::new(f.norm, 0.0);
        }
        let rate = [0, 1].map(|b| self.ops[b].left(&force_rate[b]).trace().re);
        (flux[0] + rate[0], flux[1] + rate[1])
    }

    /// One fixed RK4 step.
    pub fn step(&self, state: &HierarchyState, dt: f64) -> Result<HierarchyState> {
        let mut next = state.clone();
        self.advance(&mut next, dt, 1)?;
        Ok(next)
    }

    /// `n_steps` RK4 steps in place.
    pub fn advance(&self, state: &mut HierarchyState, dt: f64, n_steps: usize) -> Result<()> {
        let limit = self.max_step();
        if dt.is_nan() || dt <= 0.0 || dt > limit * (1.0 + 1e-12) {
            return Err(Error::StepSize { dt, limit });
        }
        let n = state.ados.len();
        let mut k = vec![Mat4::zeros(); n];
        let mut acc = vec![Mat4::zeros(); n];
        let mut tmp = vec![Mat4::zeros(); n];
        let t0 = state.time;
        for step in 1..=n_steps {
            let y = &mut state.ados;
            let f1 = self.derivative(y, &mut k);
            acc.copy_from_slice(&k);
            axpy(&mut tmp, y, &k, dt / 2.0);
            let f2 = self.derivative(&tmp, &mut k);
            accumulate(&mut acc, &k, 2.0);
            axpy(&mut tmp, y, &k, dt / 2.0);
            let f3 = self.derivative(&tmp, &mut k);
            accumulate(&mut acc, &k, 2.0);
            axpy(&mut tmp, y, &k, dt);
            let f4 = self.derivative(&tmp, &mut k);
            accumulate(&mut acc, &k, 1.0);
            let w = C64::new(dt / 6.0, 0.0);
            for (yi, ai) in y.iter_mut().zip(&acc) {
                *yi += ai * w;
            }
            for b in 0..2 {
                state.sys_heat[b] += dt / 6.0 * (f1[b] + 2.0 * f2[b] + 2.0 * f3[b] + f4[b]);
            }
            state.time = t0 + step as f64 * dt;
            if let Some(bad) = state.ados.iter().position(|m| m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
                return Err(Error::NonFinite {
                    tier: self.index.tier(bad),
                    time: state.time,
                });
            }
        }
        Ok(())
    }
}

#[inline]
fn trace_product(a: &Mat4, b: &Mat4) -> f64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..4 {
        for j in 0..4 {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s.re
}

fn axpy(out: &mut [Mat4], y: &[Mat4], k: &[Mat4], h: f64) {
    let h = C64::new(h, 0.0);
    for ((o, yi), ki) in out.iter_mut().zip(y).zip(k) {
        *o = yi + ki * h;
    }
}

fn accumulate(acc: &mut [Mat4], k: &[Mat4], w: f64) {
    let w = C64::new(w, 0.0);
    for (a, ki) in acc.iter_mut().zip(k) {
        *a += ki * w;
    }
}

fn build_kernel(
    index: &HierarchyIndex,
    i: usize,
    modes: &[Mode],
    residual: [f64; 2],
    terminator: Terminator,
) -> AdoKernel {
    let label = index.label(i).to_vec();
    let damping: f64 = label.iter().zip(modes).map(|(&n, m)| n as f64 * m.nu).sum();
    let mut markov = [C64::new(residual[0], 0.0), C64::new(residual[1], 0.0)];
    let mut up = Vec::new();
    let mut down = Vec::new();
    let at_top = index.tier(i) == index.depth();
    for (k, mode) in modes.iter().enumerate() {
        let n = label[k] as f64;
        let scale = mode.coef.norm();
        if scale == 0.0 {
            continue;
        }
        if at_top {
            if terminator == Terminator::TimeLocal {
                markov[mode.bath] += mode.coef * ((n + 1.0) / (damping + mode.nu));
            }
        } else {
            let mut plus = label.clone();
            plus[k] += 1;
            up.push(UpLink {
                target: index.position(&plus).expect("neighbour within depth") as u32,
                bath: mode.bath as u8,
                weight: ((n + 1.0) * scale).sqrt(),
            });
        }
        if label[k] > 0 {
            let mut minus = label.clone();
            minus[k] -= 1;
            let d = (n / scale).sqrt();
            down.push(DownLink {
                target: index.position(&minus).expect("lower neighbour") as u32,
                bath: mode.bath as u8,
                left: mode.coef * d,
                right: mode.coef.conj() * d,
            });
        }
    }
    AdoKernel {
        damping,
        markov,
        up,
        down,
    }
}

/// Build the generator and the initial hierarchy in one go.
pub fn build_hierarchy(
    config: &PairConfig,
    bath_a: &BathSpec,
    bath_b: &BathSpec,
    options: HeomOptions,
    rho0: &DensityOperator,
) -> Result<(Heom, HierarchyState)> {
    let heom = Heom::new(config, bath_a, bath_b, options)?;
    let state = heom.initial_state(rho0)?;
    Ok((heom, state))
}

/// Cumulative heat and interaction energy sampled along a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeatLedger {
    pub times: Vec<f64>,
    /// heat that has left bath A
    pub q_a: Vec<f64>,
    pub q_b: Vec<f64>,
    /// `<V_AB>` (zero while the qubits are decoupled)
    pub e_int: Vec<f64>,
}

impl HeatLedger {
    pub(crate) fn push(&mut self, t: f64, heat: [f64; 2], e_int: f64) {
        self.times.push(t);
        self.q_a.push(heat[0]);
        self.q_b.push(heat[1]);
        self.e_int.push(e_int);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Sampled output of a dissipative run.
#[derive(Debug, Clone)]
pub struct DissipativeRun {
    pub trace: SedTrace,
    pub ledger: HeatLedger,
    pub states: Vec<DensityOperator>,
    pub final_state: HierarchyState,
    /// smallest eigenvalue of ADO 0 over the samples
    pub min_eigenvalue: f64,
}

impl DissipativeRun {
    /// `(E_A, E_B)` at every sample.
    pub fn local_energies(&self) -> Vec<(f64, f64)> {
        self.states
            .iter()
            .map(|s| local_energies(&s.to_matrix4().expect("two-qubit state")))
            .collect()
    }
}

/// `<V_AB>` in the current coupling phase.
pub fn interaction_expectation(heom: &Heom, rho: &Mat4) -> f64 {
    if heom.is_coupled() {
        (interaction_matrix(heom.config()) * rho).trace().re
    } else {
        0.0
    }
}

/// Samples diagnostics along a trajectory that may span several phases.
#[derive(Debug, Clone)]
pub(crate) struct Sampler {
    pub trace: SedTrace,
    pub ledger: HeatLedger,
    pub states: Vec<DensityOperator>,
    pub min_eigenvalue: f64,
}

impl Sampler {
    pub(crate) fn new() -> Self {
        Self {
            trace: SedTrace::default(),
            ledger: HeatLedger::default(),
            states: Vec::new(),
            min_eigenvalue: f64::INFINITY,
        }
    }

    pub(crate) fn record(&mut self, heom: &Heom, state: &HierarchyState) -> Result<()> {
        let rho = state
            .density()
            .map_err(|e| Error::Invariant(format!("at t = {}: {e}", state.time)))?;
        self.min_eigenvalue = self.min_eigenvalue.min(rho.eigenvalues()[0]);
        self.trace.push(state.time, &rho)?;
        self.ledger
            .push(state.time, heom.heat(state), interaction_expectation(heom, state.rho()));
        self.states.push(rho);
        Ok(())
    }

    /// Propagate for `duration`, recording every `stride` steps and at the end.
    pub(crate) fn advance(
        &mut self,
        heom: &Heom,
        state: &mut HierarchyState,
        dt: f64,
        duration: f64,
        stride: usize,
    ) -> Result<()> {
        let n_steps = step_count(dt, duration)?;
        let stride = stride.max(1);
        let mut done = 0;
        while done < n_steps {
            let chunk = stride.min(n_steps - done);
            heom.advance(state, dt, chunk)?;
            done += chunk;
            self.record(heom, state)?;
        }
        Ok(())
    }
}

/// Propagate `state` for `t_final`, sampling every `stride` steps.
pub fn run_dissipative(
    heom: &Heom,
    mut state: HierarchyState,
    dt: f64,
    t_final: f64,
    stride: usize,
) -> Result<DissipativeRun> {
    let mut sampler = Sampler::new();
    sampler.record(heom, &state)?;
    sampler.advance(heom, &mut state, dt, t_final, stride)?;
    Ok(DissipativeRun {
        trace: sampler.trace,
        ledger: sampler.ledger,
        states: sampler.states,
        final_state: state,
        min_eigenvalue: sampler.min_eigenvalue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed::{fuel_state, integrate_lvn, PairConfig};
    use crate::qstate::{gibbs_state, qubit_hamiltonian};
    use approx::assert_abs_diff_eq;

    fn bath(kappa: f64, t: f64, k: usize) -> BathSpec {
        BathSpec::new(kappa, 1.0, t, k).unwrap()
    }

    #[test]
    fn ado_counts() {
        let cfg = PairConfig::default();
        let heom = Heom::new(&cfg, &bath(0.01, 2.0, 0), &bath(0.01, 1.0, 0), HeomOptions::with_depth(1)).unwrap();
        assert_eq!(heom.n_ados(), 3);
        let heom = Heom::new(&cfg, &bath(0.01, 2.0, 1), &bath(0.01, 1.0, 1), HeomOptions::with_depth(3)).unwrap();
        assert_eq!(heom.n_ados(), 35);
        let heom = Heom::new(&cfg, &bath(0.01, 2.0, 2), &bath(0.01, 1.0, 2), HeomOptions::with_depth(4)).unwrap();
        assert_eq!(heom.n_ados(), 210);
    }

    #[test]
    fn index_is_consistent() {
        let index = HierarchyIndex::new(4, 3, 1000).unwrap();
        assert_eq!(index.len(), 35);
        for i in 0..index.len() {
            let label = index.label(i);
            assert_eq!(label.iter().map(|&n| n as usize).sum::<usize>(), index.tier(i));
            assert_eq!(index.position(label), Some(i));
        }
        assert!(index.tier(0) == 0 && index.tier(34) == 3);
    }

    #[test]
    fn resource_cap() {
        let cfg = PairConfig::default();
        let opts = HeomOptions {
            ado_cap: 100,
            ..HeomOptions::with_depth(6)
        };
        let err = Heom::new(&cfg, &bath(0.01, 2.0, 2), &bath(0.01, 1.0, 2), opts).unwrap_err();
        assert_eq!(err, Error::ResourceCap { size: 924, cap: 100 });
    }

    #[test]
    fn drude_terms() {
        let (terms, tail) = correlation_terms(&bath(0.01, 2.0, 2));
        assert_eq!(terms.len(), 3);
        assert_abs_diff_eq!(terms[0].coef.re, 0.01 / 0.25f64.tan(), epsilon = 1e-15);
        assert_abs_diff_eq!(terms[0].coef.im, -0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(terms[2].nu, 8.0 * PI, epsilon = 1e-12);
        // brute-force tail
        let mut direct = 0.0;
        for j in 3..2_000_000 {
            let nu = 4.0 * PI * j as f64;
            direct += 4.0 * 0.01 * nu * 2.0 / (nu * nu - 1.0) / nu;
        }
        assert_abs_diff_eq!(tail, direct, epsilon = 1e-9);
    }

    #[test]
    fn step_guard() {
        let cfg = PairConfig::default();
        let (heom, state) = build_hierarchy(
            &cfg,
            &bath(0.01, 2.0, 2),
            &bath(0.01, 1.0, 2),
            HeomOptions::with_depth(2),
            &fuel_state(&cfg).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(heom.max_step(), 0.1 / (8.0 * PI), epsilon = 1e-15);
        assert!(matches!(heom.step(&state, 0.01), Err(Error::StepSize { .. })));
    }

    #[test]
    fn decoupled_baths_reduce_to_unitary() {
        let cfg = PairConfig::default();
        let rho0 = fuel_state(&cfg).unwrap();
        let (heom, state) = build_hierarchy(
            &cfg,
            &bath(0.0, 2.0, 1),
            &bath(0.0, 1.0, 1),
            HeomOptions::with_depth(2),
            &rho0,
        )
        .unwrap();
        let run = run_dissipative(&heom, state, 1e-3, 10.0, 1000).unwrap();
        let closed = integrate_lvn(&cfg, &rho0, 1e-3, 10.0, 1000).unwrap();
        for (a, b) in run.states.iter().zip(&closed.states) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
        assert!(run.ledger.q_a.iter().all(|q| *q == 0.0));
    }

    #[test]
    fn ados_hermitian_and_trace_preserved() {
        let cfg = PairConfig::default();
        let (heom, mut state) = build_hierarchy(
            &cfg,
            &bath(0.05, 2.0, 1),
            &bath(0.05, 1.0, 1),
            HeomOptions::with_depth(3),
            &fuel_state(&cfg).unwrap(),
        )
        .unwrap();
        heom.advance(&mut state, 0.005, 400).unwrap();
        for m in state.ados() {
            assert!((m - m.adjoint()).iter().all(|z| z.norm() < 1e-12));
        }
        assert_abs_diff_eq!(state.rho().trace().re, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn parallel_evaluation_is_bitwise_identical() {
        let cfg = PairConfig::default();
        let rho0 = fuel_state(&cfg).unwrap();
        let serial = HeomOptions {
            parallel_min: usize::MAX,
            ..HeomOptions::with_depth(3)
        };
        let parallel = HeomOptions {
            parallel_min: 1,
            ..HeomOptions::with_depth(3)
        };
        let mut out = Vec::new();
        for opts in [serial, parallel] {
            let (heom, mut state) =
                build_hierarchy(&cfg, &bath(0.05, 2.0, 1), &bath(0.05, 1.0, 1), opts, &rho0).unwrap();
            heom.advance(&mut state, 0.005, 50).unwrap();
            out.push((state.ados().to_vec(), heom.heat(&state)));
        }
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn rk4_step_halving_is_fifth_order() {
        let cfg = PairConfig::default();
        let (heom, state) = build_hierarchy(
            &cfg,
            &bath(0.05, 2.0, 1),
            &bath(0.05, 1.0, 1),
            HeomOptions::with_depth(2),
            &fuel_state(&cfg).unwrap(),
        )
        .unwrap();
        let diff = |dt: f64| {
            let one = heom.step(&state, dt).unwrap();
            let mut two = state.clone();
            heom.advance(&mut two, dt / 2.0, 2).unwrap();
            one.ados()
                .iter()
                .zip(two.ados())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (diff(0.006), diff(0.003));
        // local error ~ dt^5 gives a ratio of 32
        let ratio = e1 / e2;
        assert!(ratio > 20.0 && ratio < 45.0, "ratio {ratio}");
    }

    #[test]
    fn replacing_state_books_no_heat() {
        let cfg = PairConfig::default();
        let (heom, mut state) = build_hierarchy(
            &cfg,
            &bath(0.05, 2.0, 1),
            &bath(0.05, 1.0, 1),
            HeomOptions::with_depth(2),
            &fuel_state(&cfg).unwrap(),
        )
        .unwrap();
        heom.advance(&mut state, 0.005, 200).unwrap();
        let before = heom.heat(&state);
        let rho = *state.rho();
        heom.replace_system_state(&mut state, &rho, true);
        assert_eq!(heom.heat(&state), before);
        assert!(state.ados().iter().skip(1).all(|m| m.norm() == 0.0));
    }

    #[test]
    fn energy_balance_over_short_run() {
        let cfg = PairConfig::default();
        let (heom, state) = build_hierarchy(
            &cfg,
            &bath(0.01, 2.0, 2),
            &bath(0.01, 1.0, 2),
            HeomOptions::with_depth(3),
            &fuel_state(&cfg).unwrap(),
        )
        .unwrap();
        let e_sys = |s: &HierarchyState| (heom.system_hamiltonian() * s.rho()).trace().re;
        let e0 = e_sys(&state) + heom.interaction_energy(&state).iter().sum::<f64>();
        let run = run_dissipative(&heom, state, 0.0025, 20.0, 800).unwrap();
        let last = &run.final_state;
        let e1 = e_sys(last) + heom.interaction_energy(last).iter().sum::<f64>();
        let q = heom.heat(last);
        assert_abs_diff_eq!(e1 - e0, q[0] + q[1], epsilon = 1e-10);
    }

    #[test]
    fn heat_current_matches_ledger_derivative() {
        let cfg = PairConfig::default();
        let (heom, state) = build_hierarchy(
            &cfg,
            &bath(0.01, 2.0, 1),
            &bath(0.01, 1.0, 1),
            HeomOptions::with_depth(3),
            &fuel_state(&cfg).unwrap(),
        )
        .unwrap();
        let dt = 0.001;
        let mut s = state;
        heom.advance(&mut s, dt, 3000).unwrap();
        let (ja, jb) = heom.heat_currents(&s);
        let before = heom.heat(&heom.step(&s, dt).map(|_| s.clone()).unwrap());
        let mut back = s.clone();
        heom.advance(&mut back, dt, 1).unwrap();
        let fwd = heom.heat(&back);
        assert_abs_diff_eq!((fwd[0] - before[0]) / dt, ja, epsilon = 1e-5);
        assert_abs_diff_eq!((fwd[1] - before[1]) / dt, jb, epsilon = 1e-5);
    }

    #[test]
    fn gibbs_start_without_interaction_is_near_stationary() {
        let cfg = PairConfig::default();
        let h = qubit_hamiltonian();
        let rho0 = gibbs_state(0.5, &h).unwrap().tensor(&gibbs_state(1.0, &h).unwrap());
        let (heom, state) = build_hierarchy(
            &cfg,
            &bath(0.01, 2.0, 1),
            &bath(0.01, 1.0, 1),
            HeomOptions::with_depth(2),
            &rho0,
        )
        .unwrap();
        let heom = heom.with_coupled(false);
        let run = run_dissipative(&heom, state, 0.005, 30.0, 6000).unwrap();
        // the qubits only acquire an O(kappa) dressing by their baths
        let last = run.states.last().unwrap();
        assert!(last.trace_distance(&rho0) < 0.02);
        assert!(run.ledger.q_a.last().unwrap().abs() < 0.03);
        assert!(run.ledger.q_b.last().unwrap().abs() < 0.03);
    }
}
