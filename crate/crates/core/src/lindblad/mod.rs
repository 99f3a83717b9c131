//! Small dense Lindblad master-equation engine.
//!
//! Density matrices are mapped to vectors by column stacking (column-major,
//! `vec(ρ)[i + d·j] = ρ[i, j]`), so `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`. The
//! superoperator of a [`LiouvillianSpec`] is built in that convention and
//! can be exchanged with other tools that use the same ordering.

mod expm;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub use self::expm::expm;
use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const TRACE_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-12;
/// Smallest eigenvalue tolerated (and clamped) on a density matrix.
pub const POSITIVITY_TOL: f64 = 1e-10;
/// Looser tolerance applied to states produced by propagation.
const EVOLVED_TOL: f64 = 1e-10;

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn hermiticity_defect(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Column-stack a square matrix.
pub fn stack(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Inverse of [`stack`].
pub fn unstack(v: &CVector, dim: usize) -> CMatrix {
    assert_eq!(v.len(), dim * dim, "stacked vector has wrong length");
    CMatrix::from_column_slice(dim, dim, v.as_slice())
}

/// `Tr[A X]` where `x` is the stacked form of X.
pub(crate) fn trace_against(a: &CMatrix, x: &CVector) -> Complex64 {
    let d = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..d {
        for i in 0..d {
            // Tr[A X] = Σ_ij A_ij X_ji and X_ji sits at index j + d·i.
            acc += a[(i, j)] * x[j + d * i];
        }
    }
    acc
}

/// |i⟩⟨j| in a `dim`-dimensional space.
pub fn ket_bra(dim: usize, i: usize, j: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    m[(i, j)] = Complex64::new(1.0, 0.0);
    m
}

/// A trace-one, Hermitian, positive semidefinite operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: CMatrix,
}

impl DensityMatrix {
    /// Validates the density-matrix invariants. Eigenvalues in
    /// `[-POSITIVITY_TOL, 0)` are clamped to zero with a warning.
    pub fn new(entries: CMatrix) -> Result<Self> {
        Self::checked(entries, TRACE_TOL, HERMITIAN_TOL)
    }

    /// The pure state |i⟩⟨i|.
    pub fn pure(dim: usize, index: usize) -> Self {
        assert!(index < dim);
        DensityMatrix {
            entries: ket_bra(dim, index, index),
        }
    }

    fn checked(entries: CMatrix, trace_tol: f64, herm_tol: f64) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::validation(
                "density matrix must be square and non-empty",
            ));
        }
        if entries
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::validation("density matrix has non-finite entries"));
        }
        let tr = entries.trace();
        if (tr - Complex64::new(1.0, 0.0)).norm() > trace_tol {
            return Err(Error::validation(format!(
                "density matrix trace is {tr}, expected 1"
            )));
        }
        let defect = hermiticity_defect(&entries);
        if defect > herm_tol {
            return Err(Error::validation(format!(
                "density matrix is not Hermitian (defect {defect:.3e})"
            )));
        }
        let herm = (&entries + entries.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(herm.clone());
        let min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min < -POSITIVITY_TOL {
            return Err(Error::validation(format!(
                "density matrix has negative eigenvalue {min:.3e}"
            )));
        }
        if min < 0.0 {
            warn!("clamping density-matrix eigenvalue {min:.3e} to zero");
            let clamped = eig.eigenvalues.map(|x| x.max(0.0));
            let total: f64 = clamped.iter().sum();
            let d = herm.nrows();
            let mut rebuilt = CMatrix::zeros(d, d);
            for k in 0..d {
                let v = eig.eigenvectors.column(k);
                rebuilt += (v * v.adjoint()) * Complex64::new(clamped[k] / total, 0.0);
            }
            return Ok(DensityMatrix { entries: rebuilt });
        }
        Ok(DensityMatrix { entries: herm })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.entries
    }

    /// ⟨i|ρ|i⟩.
    pub fn population(&self, i: usize) -> f64 {
        self.entries[(i, i)].re
    }

    /// `Tr[op ρ]`.
    pub fn expectation(&self, op: &CMatrix) -> Complex64 {
        (op * &self.entries).trace()
    }

    pub fn stacked(&self) -> CVector {
        stack(&self.entries)
    }
}

/// One dissipative channel `rate · (XρX† − ½{X†X, ρ})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dissipator {
    pub operator: CMatrix,
    /// Rate in 1/s.
    pub rate: f64,
}

/// Hamiltonian plus Lindblad dissipators; the generator of the dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct LiouvillianSpec {
    dim: usize,
    hamiltonian: CMatrix,
    dissipators: Vec<Dissipator>,
}

impl LiouvillianSpec {
    /// `hamiltonian` is in angular-frequency units (rad/s).
    pub fn new(hamiltonian: CMatrix, dissipators: Vec<Dissipator>) -> Result<Self> {
        let dim = hamiltonian.nrows();
        if dim == 0 || hamiltonian.ncols() != dim {
            return Err(Error::validation(
                "hamiltonian must be square and non-empty",
            ));
        }
        let scale = max_abs(&hamiltonian).max(1.0);
        let defect = hermiticity_defect(&hamiltonian);
        if defect > HERMITIAN_TOL * scale {
            return Err(Error::validation(format!(
                "hamiltonian is not Hermitian (defect {defect:.3e})"
            )));
        }
        for (k, d) in dissipators.iter().enumerate() {
            if d.operator.nrows() != dim || d.operator.ncols() != dim {
                return Err(Error::validation(format!(
                    "dissipator {k} has shape {}x{}, expected {dim}x{dim}",
                    d.operator.nrows(),
                    d.operator.ncols()
                )));
            }
            if !(d.rate >= 0.0) || !d.rate.is_finite() {
                return Err(Error::validation(format!(
                    "dissipator {k} has invalid rate {}",
                    d.rate
                )));
            }
        }
        Ok(LiouvillianSpec {
            dim,
            hamiltonian,
            dissipators,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn dissipators(&self) -> &[Dissipator] {
        &self.dissipators
    }

    /// Applies the generator directly to an operator (no superoperator).
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let i = Complex64::new(0.0, 1.0);
        let h = &self.hamiltonian;
        let mut out = (h * rho - rho * h) * (-i);
        for d in &self.dissipators {
            let x = &d.operator;
            let xd = x.adjoint();
            let xdx = &xd * x;
            let term = x * rho * &xd - (&xdx * rho + rho * &xdx) * Complex64::new(0.5, 0.0);
            out += term * Complex64::new(d.rate, 0.0);
        }
        out
    }
}

/// Matrix form of a Liouvillian acting on column-stacked operators, 1/s.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    dim: usize,
    matrix: CMatrix,
}

impl Superoperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        unstack(&(&self.matrix * stack(rho)), self.dim)
    }

    pub fn norm_1(&self) -> f64 {
        expm::norm_1(&self.matrix)
    }

    /// exp(L·t).
    pub fn propagator(&self, t: f64) -> Result<CMatrix> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::argument(format!(
                "propagation time must be finite and non-negative, got {t}"
            )));
        }
        Ok(expm(&(&self.matrix * Complex64::new(t, 0.0))))
    }
}

/// Builds `−i[H,·] + Σ rate·(X·X† − ½{X†X, ·})` in the column-stacked basis.
pub fn build_superoperator(spec: &LiouvillianSpec) -> Superoperator {
    let d = spec.dim;
    let ident = CMatrix::identity(d, d);
    let i = Complex64::new(0.0, 1.0);
    let h = &spec.hamiltonian;
    let mut matrix = (ident.kronecker(h) - h.transpose().kronecker(&ident)) * (-i);
    for diss in &spec.dissipators {
        if diss.rate == 0.0 {
            continue;
        }
        let x = &diss.operator;
        let xdx = x.adjoint() * x;
        let jump = x.conjugate().kronecker(x);
        let anti = ident.kronecker(&xdx) + xdx.transpose().kronecker(&ident);
        matrix += (jump - anti * Complex64::new(0.5, 0.0)) * Complex64::new(diss.rate, 0.0);
    }
    Superoperator { dim: d, matrix }
}

/// ρ(t) = exp(L·t) ρ₀.
pub fn propagate(l: &Superoperator, rho0: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    if rho0.dim() != l.dim {
        return Err(Error::argument(format!(
            "state dimension {} does not match superoperator dimension {}",
            rho0.dim(),
            l.dim
        )));
    }
    let p = l.propagator(t)?;
    let out = unstack(&(p * rho0.stacked()), l.dim);
    DensityMatrix::checked(out, EVOLVED_TOL, EVOLVED_TOL)
}

/// Stacked trace functional `t` with `tᵀ vec(ρ) = Tr ρ`.
fn trace_row(dim: usize) -> CVector {
    stack(&CMatrix::identity(dim, dim))
}

/// Number of singular values of `m` below `rel_tol · σ_max`.
fn kernel_dimension(m: &CMatrix, rel_tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return m.ncols();
    }
    sv.iter().filter(|&&s| s <= rel_tol * smax).count()
}

/// Solves the bordered system `[[A, c], [rᵀ, 0]] [x; λ] = [b; β]`.
fn bordered_solve(
    a: &CMatrix,
    border_col: &CVector,
    border_row: &CVector,
    rhs: &CVector,
    rhs_last: Complex64,
) -> Result<(CVector, Complex64)> {
    let n = a.nrows();
    let mut big = CMatrix::zeros(n + 1, n + 1);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    for k in 0..n {
        big[(k, n)] = border_col[k];
        big[(n, k)] = border_row[k];
    }
    let mut b = CVector::zeros(n + 1);
    b.rows_mut(0, n).copy_from(rhs);
    b[n] = rhs_last;
    let sol = big
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::numerical("bordered system is singular"))?;
    Ok((sol.rows(0, n).into_owned(), sol[n]))
}

const KERNEL_TOL: f64 = 1e-9;

/// The unique trace-one fixed point of the dynamics.
///
/// Solved as the bordered system `[[L, t*], [tᵀ, 0]]`, with `t` the trace
/// functional, after checking that the kernel of `L` is one-dimensional.
pub fn steady_state(l: &Superoperator) -> Result<DensityMatrix> {
    let kdim = kernel_dimension(&l.matrix, KERNEL_TOL);
    if kdim != 1 {
        return Err(Error::SteadyState(format!(
            "superoperator kernel has dimension {kdim}; a unique steady state needs 1"
        )));
    }
    let t = trace_row(l.dim);
    let zero = CVector::zeros(l.dim * l.dim);
    let (x, _) = bordered_solve(
        &l.matrix,
        &t.conjugate(),
        &t,
        &zero,
        Complex64::new(1.0, 0.0),
    )
    .map_err(|e| Error::SteadyState(e.to_string()))?;
    let residual = (&l.matrix * &x)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if residual > 1e-10 * l.norm_1().max(1.0) {
        return Err(Error::SteadyState(format!(
            "steady-state residual {residual:.3e} too large"
        )));
    }
    DensityMatrix::checked(unstack(&x, l.dim), EVOLVED_TOL, EVOLVED_TOL)
        .map_err(|e| Error::SteadyState(format!("no valid steady state: {e}")))
}

fn check_dims(l: &Superoperator, rho: &DensityMatrix, ops: &[&CMatrix]) -> Result<()> {
    if rho.dim() != l.dim {
        return Err(Error::argument(format!(
            "state dimension {} does not match superoperator dimension {}",
            rho.dim(),
            l.dim
        )));
    }
    for op in ops {
        if op.nrows() != l.dim || op.ncols() != l.dim {
            return Err(Error::argument(format!(
                "operator shape {}x{} does not match dimension {}",
                op.nrows(),
                op.ncols(),
                l.dim
            )));
        }
    }
    Ok(())
}

/// Quantum-regression correlator `Tr[left · exp(Lτ)(mid · ρ · right)]`.
///
/// `(σ†, σ, 𝟙)` on the steady state gives g¹(τ) = ⟨σ†(t+τ)σ(t)⟩ and
/// `(σ†σ, σ, σ†)` gives the unnormalized g²(t, t+τ).
pub fn two_time_correlator(
    l: &Superoperator,
    rho: &DensityMatrix,
    left: &CMatrix,
    mid: &CMatrix,
    right: &CMatrix,
    taus: &[f64],
) -> Result<Vec<Complex64>> {
    check_dims(l, rho, &[left, mid, right])?;
    let x0 = stack(&(mid * rho.matrix() * right));
    taus.iter()
        .map(|&tau| {
            if !(tau >= 0.0) {
                return Err(Error::argument(format!(
                    "correlator delays must be non-negative, got {tau}"
                )));
            }
            let p = l.propagator(tau)?;
            Ok(trace_against(left, &(p * &x0)))
        })
        .collect()
}

/// `∫₀^∞ [C(τ) − C(∞)] dτ` for the correlator of [`two_time_correlator`],
/// evaluated exactly through the resolvent of `L` on its decaying subspace.
///
/// `rho_ss` must be the steady state of `l`; `C(∞) = Tr[mid ρ right]·Tr[left ρ_ss]`.
pub fn integrated_correlator(
    l: &Superoperator,
    rho_ss: &DensityMatrix,
    left: &CMatrix,
    mid: &CMatrix,
    right: &CMatrix,
) -> Result<Complex64> {
    check_dims(l, rho_ss, &[left, mid, right])?;
    let s = rho_ss.stacked();
    let x = stack(&(mid * rho_ss.matrix() * right));
    let weight = x.iter().step_by(l.dim + 1).sum::<Complex64>();
    let decaying = &x - &s * weight;
    let t = trace_row(l.dim);
    let (y, _) = bordered_solve(&l.matrix, &s, &t, &(-decaying), Complex64::new(0.0, 0.0))?;
    Ok(trace_against(left, &y))
}

/// `∫₀^∞ |C(τ)|² dτ` for a correlator that decays to zero, via the
/// doubled generator `L ⊗ 𝟙 + 𝟙 ⊗ L̄` acting on `x ⊗ x̄`.
pub fn integrated_abs_squared_correlator(
    l: &Superoperator,
    rho_ss: &DensityMatrix,
    left: &CMatrix,
    mid: &CMatrix,
    right: &CMatrix,
) -> Result<f64> {
    check_dims(l, rho_ss, &[left, mid, right])?;
    let n = l.dim * l.dim;
    let s = rho_ss.stacked();
    let x = stack(&(mid * rho_ss.matrix() * right));
    let weight = x.iter().step_by(l.dim + 1).sum::<Complex64>();
    let asymptote = weight * rho_ss.expectation(left);
    let scale = x.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300)
        * left.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if asymptote.norm() > 1e-10 * scale {
        return Err(Error::argument(
            "correlator does not decay to zero; |C|² is not integrable",
        ));
    }
    let ident = CMatrix::identity(n, n);
    let doubled = l.matrix.kronecker(&ident) + ident.kronecker(&l.matrix.conjugate());
    let xx = x.kronecker(&x.conjugate());
    let ss = s.kronecker(&s.conjugate());
    let t = trace_row(l.dim);
    let tt = t.kronecker(&t);
    let (y, _) = bordered_solve(&doubled, &ss, &tt, &(-xx), Complex64::new(0.0, 0.0))?;
    let c = stack(&left.transpose());
    let cc = c.kronecker(&c.conjugate());
    Ok(cc
        .iter()
        .zip(y.iter())
        .map(|(a, b)| a * b)
        .sum::<Complex64>()
        .re)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    // |e⟩ = index 0, |g⟩ = index 1.
    fn sigma2() -> CMatrix {
        ket_bra(2, 1, 0)
    }

    fn decay_only(gamma1: f64) -> Superoperator {
        let spec = LiouvillianSpec::new(
            CMatrix::zeros(2, 2),
            vec![Dissipator {
                operator: sigma2(),
                rate: gamma1,
            }],
        )
        .unwrap();
        build_superoperator(&spec)
    }

    #[test]
    fn stacking_is_column_major() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0), c(2.0), c(3.0), c(4.0)]);
        let v = stack(&m);
        assert_eq!(v.as_slice(), &[c(1.0), c(3.0), c(2.0), c(4.0)]);
        assert_eq!(unstack(&v, 2), m);
    }

    #[test]
    fn spontaneous_decay_rate_of_excited_population() {
        let l = decay_only(3.0);
        let d = l.apply(&ket_bra(2, 0, 0));
        assert!((d[(0, 0)] - c(-3.0)).norm() < 1e-15);
        assert!((d[(1, 1)] - c(3.0)).norm() < 1e-15);
    }

    #[test]
    fn empty_generator_is_zero() {
        let spec = LiouvillianSpec::new(CMatrix::zeros(2, 2), vec![]).unwrap();
        let l = build_superoperator(&spec);
        assert!(l.matrix().iter().all(|z| *z == c(0.0)));
    }

    #[test]
    fn superoperator_matches_direct_application() {
        let h = CMatrix::from_row_slice(
            2,
            2,
            &[
                c(0.3),
                Complex64::new(0.1, -0.4),
                Complex64::new(0.1, 0.4),
                c(-0.2),
            ],
        );
        let spec = LiouvillianSpec::new(
            h,
            vec![
                Dissipator {
                    operator: sigma2(),
                    rate: 1.0,
                },
                Dissipator {
                    operator: ket_bra(2, 0, 0),
                    rate: 0.7,
                },
            ],
        )
        .unwrap();
        let l = build_superoperator(&spec);
        let rho = CMatrix::from_row_slice(
            2,
            2,
            &[
                c(0.6),
                Complex64::new(0.2, 0.1),
                Complex64::new(0.2, -0.1),
                c(0.4),
            ],
        );
        let direct = spec.apply(&rho);
        assert!((l.apply(&rho) - direct).iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn rejects_invalid_specs() {
        let bad_h = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]);
        assert!(matches!(
            LiouvillianSpec::new(bad_h, vec![]),
            Err(Error::Validation(_))
        ));
        let neg = LiouvillianSpec::new(
            CMatrix::zeros(2, 2),
            vec![Dissipator {
                operator: sigma2(),
                rate: -1.0,
            }],
        );
        assert!(matches!(neg, Err(Error::Validation(_))));
    }

    #[test]
    fn negative_time_is_rejected() {
        let l = decay_only(1.0);
        assert!(matches!(
            propagate(&l, &DensityMatrix::pure(2, 0), -1.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn exponential_decay() {
        let g = 2.0 * std::f64::consts::PI * 40e6;
        let l = decay_only(g);
        let rho = propagate(&l, &DensityMatrix::pure(2, 0), 1.0 / g).unwrap();
        assert!((rho.population(0) - (-1.0f64).exp()).abs() < 1e-8);
        let same = propagate(&l, &DensityMatrix::pure(2, 0), 0.0).unwrap();
        assert_eq!(same, DensityMatrix::pure(2, 0));
    }

    #[test]
    fn degenerate_kernel_is_reported() {
        let spec = LiouvillianSpec::new(CMatrix::zeros(2, 2), vec![]).unwrap();
        let err = steady_state(&build_superoperator(&spec)).unwrap_err();
        assert!(err.to_string().contains("dimension 4"), "{err}");
    }

    #[test]
    fn density_matrix_validation() {
        let not_unit = CMatrix::from_row_slice(2, 2, &[c(0.5), c(0.0), c(0.0), c(0.4)]);
        assert!(DensityMatrix::new(not_unit).is_err());
        let negative = CMatrix::from_row_slice(2, 2, &[c(1.1), c(0.0), c(0.0), c(-0.1)]);
        assert!(DensityMatrix::new(negative).is_err());
        // A tiny negative eigenvalue is clamped.
        let tiny = CMatrix::from_row_slice(2, 2, &[c(1.0 + 1e-12), c(0.0), c(0.0), c(-1e-12)]);
        let rho = DensityMatrix::new(tiny).unwrap();
        assert!(rho.population(1) >= 0.0);
    }

    #[test]
    fn dimension_mismatch_in_correlator() {
        let l = decay_only(1.0);
        let rho = DensityMatrix::pure(2, 0);
        let big = CMatrix::identity(3, 3);
        assert!(matches!(
            two_time_correlator(&l, &rho, &big, &sigma2(), &sigma2(), &[0.0]),
            Err(Error::Argument(_))
        ));
    }
}
