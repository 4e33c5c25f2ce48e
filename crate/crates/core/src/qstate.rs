//! Dense density-matrix algebra for one and two qubits.
//!
//! Two-qubit operators use the product basis `{|00>, |01>, |10>, |11>}` with
//! qubit A as the left tensor factor. Energies are in units of the qubit
//! splitting and temperatures in units with `k_B = 1`.

use nalgebra::{DMatrix, Matrix2, Matrix4, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-12;
pub const POSITIVITY_TOL: f64 = 1e-10;

/// Eigenvalues below this are treated as exact zeros in `x ln x`.
const ENTROPY_FLOOR: f64 = 1e-14;
/// Eigenvalues of sigma below this are outside its support.
const SUPPORT_FLOOR: f64 = 1e-12;
/// Weight of rho on a null direction of sigma that still counts as "no weight".
const SUPPORT_WEIGHT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subsystem {
    A,
    B,
}

/// Tolerances used when validating a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub hermitian: f64,
    pub trace: f64,
    pub positivity: f64,
}

impl Tolerance {
    pub const STRICT: Tolerance = Tolerance {
        hermitian: HERMITIAN_TOL,
        trace: TRACE_TOL,
        positivity: POSITIVITY_TOL,
    };

    /// Same bound on all three checks.
    pub const fn uniform(tol: f64) -> Tolerance {
        Tolerance {
            hermitian: tol,
            trace: tol,
            positivity: tol,
        }
    }
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    elements: DMatrix<C64>,
}

/// Hermitian matrix, e.g. a Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianObservable {
    elements: DMatrix<C64>,
}

fn max_hermitian_deviation(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Real eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Apply a real function to the spectrum of a Hermitian matrix.
pub fn hermitian_map(m: &DMatrix<C64>, f: impl Fn(f64) -> f64) -> DMatrix<C64> {
    let (values, vectors) = hermitian_eigen(m);
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        values.len(),
        values.iter().map(|&v| C64::new(f(v), 0.0)),
    ));
    &vectors * diag * vectors.adjoint()
}

impl DensityOperator {
    /// Validate `elements` against the strict tolerances.
    pub fn new(elements: DMatrix<C64>) -> Result<Self> {
        Self::with_tolerance(elements, Tolerance::STRICT)
    }

    pub fn with_tolerance(elements: DMatrix<C64>, tol: Tolerance) -> Result<Self> {
        if elements.nrows() != elements.ncols() || elements.nrows() == 0 {
            return Err(Error::Invariant(format!(
                "matrix is {}x{}, expected a non-empty square matrix",
                elements.nrows(),
                elements.ncols()
            )));
        }
        let herm = max_hermitian_deviation(&elements);
        if herm > tol.hermitian {
            return Err(Error::NotHermitian(herm));
        }
        let trace = elements.trace();
        if (trace - C64::new(1.0, 0.0)).norm() > tol.trace {
            return Err(Error::Invariant(format!("trace is {trace}, expected 1")));
        }
        let (values, _) = hermitian_eigen(&elements);
        if values[0] < -tol.positivity {
            return Err(Error::Invariant(format!(
                "smallest eigenvalue {:.3e} is negative",
                values[0]
            )));
        }
        Ok(Self { elements })
    }

    /// Wrap a matrix the caller already knows to be a valid state.
    pub(crate) fn from_matrix_unchecked(elements: DMatrix<C64>) -> Self {
        Self { elements }
    }

    pub fn from_matrix4(m: &Matrix4<C64>) -> Result<Self> {
        Self::new(DMatrix::from_iterator(4, 4, m.iter().copied()))
    }

    pub fn from_matrix2(m: &Matrix2<C64>) -> Result<Self> {
        Self::new(DMatrix::from_iterator(2, 2, m.iter().copied()))
    }

    /// Pure state `|psi><psi|` from an (unnormalized) amplitude vector.
    pub fn pure(amplitudes: &[C64]) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if norm == 0.0 {
            return Err(Error::Invariant("zero state vector".into()));
        }
        let n = amplitudes.len();
        let m = DMatrix::from_fn(n, n, |i, j| amplitudes[i] * amplitudes[j].conj() / norm);
        Self::new(m)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let m = DMatrix::from_diagonal_element(dim, dim, C64::new(1.0 / dim as f64, 0.0));
        Self { elements: m }
    }

    /// Diagonal state with the given populations (must sum to one).
    pub fn diagonal(populations: &[f64]) -> Result<Self> {
        let n = populations.len();
        Self::new(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(populations[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.elements
    }

    pub fn to_matrix4(&self) -> Result<Matrix4<C64>> {
        expect_dim(self.dim(), 4)?;
        Ok(Matrix4::from_iterator(self.elements.iter().copied()))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigen(&self.elements).0
    }

    /// Real part of `Tr(rho X)`.
    pub fn expect(&self, observable: &HermitianObservable) -> f64 {
        (&self.elements * &observable.elements).trace().re
    }

    pub fn tensor(&self, other: &DensityOperator) -> DensityOperator {
        DensityOperator {
            elements: self.elements.kronecker(&other.elements),
        }
    }

    /// Trace distance `0.5 * || rho - sigma ||_1`.
    pub fn trace_distance(&self, other: &DensityOperator) -> f64 {
        let diff = &self.elements - &other.elements;
        0.5 * hermitian_eigen(&diff).0.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Largest entrywise modulus of `rho - sigma`.
    pub fn max_abs_diff(&self, other: &DensityOperator) -> f64 {
        (&self.elements - &other.elements)
            .iter()
            .fold(0.0f64, |acc, z| acc.max(z.norm()))
    }
}

impl HermitianObservable {
    pub fn new(elements: DMatrix<C64>) -> Result<Self> {
        if elements.nrows() != elements.ncols() {
            return Err(Error::Dimension {
                expected: elements.nrows(),
                found: elements.ncols(),
            });
        }
        let herm = max_hermitian_deviation(&elements);
        if herm > HERMITIAN_TOL {
            return Err(Error::NotHermitian(herm));
        }
        Ok(Self { elements })
    }

    pub fn from_matrix4(m: &Matrix4<C64>) -> Result<Self> {
        Self::new(DMatrix::from_iterator(4, 4, m.iter().copied()))
    }

    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.elements
    }

    pub fn to_matrix4(&self) -> Result<Matrix4<C64>> {
        expect_dim(self.dim(), 4)?;
        Ok(Matrix4::from_iterator(self.elements.iter().copied()))
    }

    /// `H ⊗ I` or `I ⊗ H` on two qubits.
    pub fn embed(&self, slot: Subsystem) -> Result<HermitianObservable> {
        expect_dim(self.dim(), 2)?;
        let id = DMatrix::<C64>::identity(2, 2);
        let elements = match slot {
            Subsystem::A => self.elements.kronecker(&id),
            Subsystem::B => id.kronecker(&self.elements),
        };
        Ok(HermitianObservable { elements })
    }
}

/// Single-qubit Hamiltonian with the ground state `|0>` at energy -1/2.
pub fn qubit_hamiltonian() -> HermitianObservable {
    HermitianObservable {
        elements: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(-0.5, 0.0),
            C64::new(0.5, 0.0),
        ])),
    }
}

fn expect_dim(found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::Dimension { expected, found });
    }
    Ok(())
}

/// Reduced state of one qubit of a two-qubit state.
pub fn partial_trace(rho: &DensityOperator, keep: Subsystem) -> Result<DensityOperator> {
    expect_dim(rho.dim(), 4)?;
    let m = &rho.elements;
    // basis index = 2 * a + b
    let reduced = DMatrix::from_fn(2, 2, |i, j| match keep {
        Subsystem::A => m[(2 * i, 2 * j)] + m[(2 * i + 1, 2 * j + 1)],
        Subsystem::B => m[(i, j)] + m[(2 + i, 2 + j)],
    });
    Ok(DensityOperator::from_matrix_unchecked(reduced))
}

fn xlogx_sum(values: &[f64]) -> f64 {
    values
        .iter()
        .filter(|&&p| p > ENTROPY_FLOOR)
        .map(|&p| p * p.ln())
        .sum()
}

/// `S = -Tr(rho ln rho)` in nats.
pub fn von_neumann_entropy(rho: &DensityOperator) -> f64 {
    (-xlogx_sum(&rho.eigenvalues())).max(0.0)
}

/// `S(rho || sigma) = Tr(rho ln rho) - Tr(rho ln sigma)`.
pub fn relative_entropy(rho: &DensityOperator, sigma: &DensityOperator) -> Result<f64> {
    expect_dim(sigma.dim(), rho.dim())?;
    let (s_values, s_vectors) = hermitian_eigen(&sigma.elements);
    let mut cross = 0.0;
    for (k, &s) in s_values.iter().enumerate() {
        let v = s_vectors.column(k);
        let weight = (v.adjoint() * &rho.elements * v)[(0, 0)].re;
        if s < SUPPORT_FLOOR {
            if weight > SUPPORT_WEIGHT_TOL {
                return Err(Error::InfiniteRelativeEntropy);
            }
            continue;
        }
        cross += weight * s.ln();
    }
    Ok(xlogx_sum(&rho.eigenvalues()) - cross)
}

/// `I = S_A + S_B - S_AB`.
pub fn mutual_information(rho: &DensityOperator) -> Result<f64> {
    let s_a = von_neumann_entropy(&partial_trace(rho, Subsystem::A)?);
    let s_b = von_neumann_entropy(&partial_trace(rho, Subsystem::B)?);
    Ok(s_a + s_b - von_neumann_entropy(rho))
}

fn sigma_y_sigma_y() -> DMatrix<C64> {
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    // sigma_y ⊗ sigma_y is real: anti-diagonal (-1, 1, 1, -1)
    DMatrix::from_row_slice(
        4,
        4,
        &[z, z, z, -one, z, z, one, z, z, one, z, z, -one, z, z, z],
    )
}

/// Wootters concurrence from the spin-flipped state.
///
/// The square roots of the eigenvalues of `rho (Y⊗Y) rho* (Y⊗Y)` are
/// obtained as the singular spectrum of the Hermitian
/// `sqrt(rho) rho~ sqrt(rho)`, so only Hermitian eigensolves are needed.
pub fn concurrence(rho: &DensityOperator) -> Result<f64> {
    expect_dim(rho.dim(), 4)?;
    let yy = sigma_y_sigma_y();
    let flipped = &yy * rho.elements.conjugate() * &yy;
    let sqrt_rho = hermitian_map(&rho.elements, |v| v.max(0.0).sqrt());
    let r = &sqrt_rho * flipped * &sqrt_rho;
    let r = (&r + r.adjoint()) * C64::new(0.5, 0.0);
    let (values, _) = hermitian_eigen(&r);
    let mut mu: Vec<f64> = values.iter().map(|v| v.max(0.0).sqrt()).collect();
    mu.sort_by(|a, b| b.total_cmp(a));
    Ok((mu[0] - mu[1] - mu[2] - mu[3]).clamp(0.0, 1.0))
}

/// Closed-form concurrence of an X-shaped two-qubit state.
pub fn concurrence_x_state(rho: &DensityOperator) -> Result<f64> {
    expect_dim(rho.dim(), 4)?;
    let m = &rho.elements;
    let inner = m[(1, 2)].norm() - (m[(0, 0)].re * m[(3, 3)].re).max(0.0).sqrt();
    let outer = m[(0, 3)].norm() - (m[(1, 1)].re * m[(2, 2)].re).max(0.0).sqrt();
    Ok(2.0 * inner.max(outer).max(0.0))
}

/// `exp(-beta H) / Z`; `beta = +inf` gives the (uniform) ground-space projector.
pub fn gibbs_state(beta: f64, hamiltonian: &HermitianObservable) -> Result<DensityOperator> {
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::Parameter {
            name: "beta",
            reason: format!("{beta} is not a non-negative inverse temperature"),
        });
    }
    let (values, vectors) = hermitian_eigen(&hamiltonian.elements);
    let ground = values[0];
    let weights: Vec<f64> = if beta.is_infinite() {
        values
            .iter()
            .map(|&e| if e - ground < 1e-12 { 1.0 } else { 0.0 })
            .collect()
    } else {
        values.iter().map(|&e| (-beta * (e - ground)).exp()).collect()
    };
    let z: f64 = weights.iter().sum();
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        weights.len(),
        weights.iter().map(|w| C64::new(w / z, 0.0)),
    ));
    let m = &vectors * diag * vectors.adjoint();
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    Ok(DensityOperator::from_matrix_unchecked(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bell_01_10() -> DensityOperator {
        let s = C64::new(1.0, 0.0);
        let z = C64::new(0.0, 0.0);
        DensityOperator::pure(&[z, s, s, z]).unwrap()
    }

    fn gibbs_qubit(t: f64) -> DensityOperator {
        gibbs_state(1.0 / t, &qubit_hamiltonian()).unwrap()
    }

    #[test]
    fn partial_trace_of_product_recovers_factors() {
        let a = gibbs_qubit(2.0);
        let b = DensityOperator::diagonal(&[0.3, 0.7]).unwrap();
        let ab = a.tensor(&b);
        assert!(partial_trace(&ab, Subsystem::A).unwrap().max_abs_diff(&a) < 1e-15);
        assert!(partial_trace(&ab, Subsystem::B).unwrap().max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn partial_trace_of_bell_state_is_maximally_mixed() {
        let red = partial_trace(&bell_01_10(), Subsystem::A).unwrap();
        assert!(red.max_abs_diff(&DensityOperator::maximally_mixed(2)) < 1e-15);
    }

    #[test]
    fn partial_trace_rejects_single_qubit() {
        let err = partial_trace(&gibbs_qubit(1.0), Subsystem::A).unwrap_err();
        assert_eq!(err, Error::Dimension { expected: 4, found: 2 });
    }

    #[test]
    fn entropy_examples() {
        let z = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        let pure = DensityOperator::pure(&[one, z, z, z]).unwrap();
        assert_abs_diff_eq!(von_neumann_entropy(&pure), 0.0, epsilon = 1e-14);
        let mixed = DensityOperator::maximally_mixed(4);
        assert_abs_diff_eq!(von_neumann_entropy(&mixed), 4f64.ln(), epsilon = 1e-14);
        // Gibbs qubit at T = 1: S = beta E + ln Z
        let e = -0.5 * 0.5f64.tanh();
        let z_part = 2.0 * 0.5f64.cosh();
        assert_abs_diff_eq!(von_neumann_entropy(&gibbs_qubit(1.0)), e + z_part.ln(), epsilon = 1e-13);
    }

    #[test]
    fn relative_entropy_examples() {
        let rho = gibbs_qubit(1.3);
        assert_abs_diff_eq!(relative_entropy(&rho, &rho).unwrap(), 0.0, epsilon = 1e-14);
        let up = DensityOperator::diagonal(&[1.0, 0.0]).unwrap();
        let half = DensityOperator::maximally_mixed(2);
        assert_abs_diff_eq!(relative_entropy(&up, &half).unwrap(), 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn relative_entropy_support_violation() {
        let up = DensityOperator::diagonal(&[1.0, 0.0]).unwrap();
        let half = DensityOperator::maximally_mixed(2);
        assert_eq!(
            relative_entropy(&half, &up).unwrap_err(),
            Error::InfiniteRelativeEntropy
        );
    }

    #[test]
    fn mutual_information_examples() {
        let prod = gibbs_qubit(2.0).tensor(&gibbs_qubit(1.0));
        assert_abs_diff_eq!(mutual_information(&prod).unwrap(), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(mutual_information(&bell_01_10()).unwrap(), 2.0 * 2f64.ln(), epsilon = 1e-13);
    }

    #[test]
    fn concurrence_examples() {
        let prod = gibbs_qubit(2.0).tensor(&gibbs_qubit(1.0));
        assert_abs_diff_eq!(concurrence(&prod).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(concurrence(&bell_01_10()).unwrap(), 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(concurrence_x_state(&bell_01_10()).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn gibbs_examples() {
        let h = qubit_hamiltonian();
        let hot = gibbs_state(0.0, &h).unwrap();
        assert!(hot.max_abs_diff(&DensityOperator::maximally_mixed(2)) < 1e-15);
        let cold = gibbs_state(f64::INFINITY, &h).unwrap();
        assert!(cold.max_abs_diff(&DensityOperator::diagonal(&[1.0, 0.0]).unwrap()) < 1e-15);
        let z = 2.0 * 0.5f64.cosh();
        let expected = DensityOperator::diagonal(&[0.5f64.exp() / z, (-0.5f64).exp() / z]).unwrap();
        assert!(gibbs_state(1.0, &h).unwrap().max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        let m = DMatrix::from_diagonal_element(2, 2, C64::new(0.6, 0.0));
        assert!(matches!(DensityOperator::new(m), Err(Error::Invariant(_))));
        let mut m = DMatrix::from_diagonal_element(2, 2, C64::new(0.5, 0.0));
        m[(0, 1)] = C64::new(0.1, 0.0);
        assert!(matches!(DensityOperator::new(m), Err(Error::NotHermitian(_))));
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(1.5, 0.0),
            C64::new(-0.5, 0.0),
        ]));
        assert!(matches!(DensityOperator::new(m), Err(Error::Invariant(_))));
    }
}
