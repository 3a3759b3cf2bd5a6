//! Dense complex linear algebra shared by every other module.
//!
//! Matrices are `nalgebra` dense matrices over [`C64`]. Two validated
//! newtypes sit on top: [`HermitianOperator`] and [`DensityMatrix`]. Their
//! constructors reject inputs that violate the invariants instead of
//! silently symmetrizing them.
//!
//! Operators are vectorized row-major: the entry `(m, n)` of an `N x N`
//! operator lands at index `m * N + n`. Every superoperator matrix in the
//! crate uses this convention.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

/// Absolute tolerance on `|A_ij - conj(A_ji)|` for Hermitian inputs.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Absolute tolerance on `|Tr rho - 1|`.
pub const TRACE_TOL: f64 = 1e-10;
/// Smallest eigenvalue a density matrix may have.
pub const PSD_TOL: f64 = -1e-10;
/// Eigenvector-matrix condition number above which a matrix is flagged defective.
pub const DEFECTIVE_CONDITION: f64 = 1e8;

const EIG_MAX_ITER: usize = 0;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Largest `|A_ij - conj(A_ji)|`.
pub fn hermiticity_error(m: &ComplexMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `(A + A^dagger) / 2`.
pub fn hermitize(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn trace(m: &ComplexMatrix) -> C64 {
    m.diagonal().iter().sum()
}

pub fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a * b - b * a
}

fn all_finite(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// A Hermitian matrix (Hamiltonians, observables, interaction operators).
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator(ComplexMatrix);

impl HermitianOperator {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "Hermitian operator must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::Dimension("empty operator".into()));
        }
        if !all_finite(&m) {
            return Err(Error::NonFinite);
        }
        let err = hermiticity_error(&m);
        if err > HERMITIAN_TOL {
            return Err(Error::NotHermitian(err));
        }
        Ok(Self(m))
    }

    /// Builds a real diagonal operator.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let d = DVector::from_iterator(diag.len(), diag.iter().map(|&x| c64(x, 0.0)));
        Self::new(DMatrix::from_diagonal(&d))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(ComplexMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    /// `self * factor`; a real factor keeps the operator Hermitian.
    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.map(|z| z * factor))
    }

    /// `self + shift * identity`.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
        Self(m)
    }

    pub fn add(&self, other: &HermitianOperator) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "cannot add operators of dims {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(Self(&self.0 + &other.0))
    }

    /// `Tr(self * rho)`, real for Hermitian arguments.
    pub fn expectation(&self, rho: &DensityMatrix) -> f64 {
        (&self.0 * rho.matrix()).trace().re
    }

    /// Conjugation `U A U^dagger`; `U` must be unitary for the result to be
    /// Hermitian within tolerance, so the result is re-validated.
    pub fn conjugated(&self, u: &ComplexMatrix) -> Result<Self> {
        Self::new(hermitize(&(u * &self.0 * u.adjoint())))
    }
}

/// A positive semidefinite unit-trace Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        let h = HermitianOperator::new(m).map_err(|e| Error::NotDensity(e.to_string()))?;
        let tr = trace(h.matrix());
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(Error::NotDensity(format!("trace {tr} differs from 1")));
        }
        let min = min_eigenvalue(h.matrix());
        if min < PSD_TOL {
            return Err(Error::NotDensity(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(Self(h.0))
    }

    /// Hermitizes, renormalizes the trace and then validates. Only for
    /// states produced by this crate's own numerics (fixed points,
    /// partial traces), never for user input.
    pub(crate) fn from_numerical(m: ComplexMatrix) -> Result<Self> {
        let mut h = hermitize(&m);
        let tr = trace(&h).re;
        if tr.abs() < f64::EPSILON {
            return Err(Error::NotDensity("trace vanishes".into()));
        }
        h.unscale_mut(tr);
        Self::new(h)
    }

    pub fn basis_state(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::Dimension(format!(
                "basis index {index} >= dim {dim}"
            )));
        }
        let mut m = ComplexMatrix::zeros(dim, dim);
        m[(index, index)] = c64(1.0, 0.0);
        Ok(Self(m))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim, dim).unscale(dim as f64))
    }

    /// Projector onto a normalized copy of `psi`.
    pub fn pure(psi: &ComplexVector) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::invalid("state vector has zero or non-finite norm"));
        }
        let v = psi.unscale(norm);
        Self::from_numerical(&v * v.adjoint())
    }

    /// `sum_i p_i |i><i|`.
    pub fn from_populations(p: &[f64]) -> Result<Self> {
        let d = DVector::from_iterator(p.len(), p.iter().map(|&x| c64(x, 0.0)));
        Self::new(DMatrix::from_diagonal(&d))
    }

    /// `sum_i p_i |v_i><v_i|` for the columns `v_i` of `basis`.
    pub fn from_populations_in_basis(p: &[f64], basis: &ComplexMatrix) -> Result<Self> {
        if basis.ncols() != p.len() {
            return Err(Error::Dimension(
                "population count must match basis size".into(),
            ));
        }
        let mut m = ComplexMatrix::zeros(basis.nrows(), basis.nrows());
        for (i, &w) in p.iter().enumerate() {
            let v = basis.column(i);
            m += (v * v.adjoint()).scale(w);
        }
        Self::from_numerical(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    /// Real diagonal in the computational basis.
    pub fn populations(&self) -> Vec<f64> {
        self.0.diagonal().iter().map(|z| z.re).collect()
    }

    /// `Tr rho^2`.
    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }

    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        trace_norm(&(&self.0 - &other.0))
    }
}

fn min_eigenvalue(m: &ComplexMatrix) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Eigenvalues, column eigenvectors and quality diagnostics of a matrix.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<C64>,
    /// Unit-norm eigenvectors stored as columns, in the order of `eigenvalues`.
    pub eigenvectors: ComplexMatrix,
    /// `max_i ||A v_i - lambda_i v_i||_2`.
    pub residual: f64,
    /// 2-norm condition number of the eigenvector matrix (1 for Hermitian input).
    pub condition: f64,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn real_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.re).collect()
    }

    pub fn is_defective(&self) -> bool {
        self.condition > DEFECTIVE_CONDITION
    }

    /// Smallest gap between real parts of consecutive sorted eigenvalues.
    pub fn min_gap(&self) -> f64 {
        let mut e = self.real_eigenvalues();
        e.sort_by(f64::total_cmp);
        e.windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

fn max_residual(a: &ComplexMatrix, values: &[C64], vectors: &ComplexMatrix) -> f64 {
    let av = a * vectors;
    (0..values.len())
        .map(|i| (av.column(i) - vectors.column(i) * values[i]).norm())
        .fold(0.0, f64::max)
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending.
pub fn eigh(h: &HermitianOperator) -> Result<SpectralDecomposition> {
    let m = h.matrix();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, EIG_MAX_ITER)
        .ok_or(Error::Convergence { residual: f64::NAN })?;
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<C64> = order
        .iter()
        .map(|&i| c64(eig.eigenvalues[i], 0.0))
        .collect();
    let vectors = ComplexMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let residual = max_residual(m, &values, &vectors);
    let scale = m.norm().max(1.0);
    if residual > 1e-10 * scale {
        return Err(Error::Convergence { residual });
    }
    Ok(SpectralDecomposition {
        eigenvalues: values,
        eigenvectors: vectors,
        residual,
        condition: 1.0,
    })
}

/// Eigenvalues of a Hermitian operator, ascending.
pub fn eigvalsh(h: &HermitianOperator) -> Result<Vec<f64>> {
    let mut e: Vec<f64> = SymmetricEigen::try_new(h.matrix().clone(), f64::EPSILON, EIG_MAX_ITER)
        .ok_or(Error::Convergence { residual: f64::NAN })?
        .eigenvalues
        .iter()
        .copied()
        .collect();
    e.sort_by(f64::total_cmp);
    Ok(e)
}

/// General (non-Hermitian) eigendecomposition via complex Schur form.
///
/// Eigenvalues are sorted by descending modulus. Eigenvectors come from
/// back-substitution on the triangular factor; tiny pivots are replaced by
/// `eps * ||T||`, so a defective matrix yields nearly parallel eigenvectors
/// and a huge `condition`.
pub fn eig_general(m: &ComplexMatrix) -> Result<SpectralDecomposition> {
    eig_general_with_tol(m, 1e-8)
}

/// As [`eig_general`], failing when the residual exceeds `tol * max(1, ||m||_F)`.
pub fn eig_general_with_tol(m: &ComplexMatrix, tol: f64) -> Result<SpectralDecomposition> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eig of {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if !all_finite(m) {
        return Err(Error::NonFinite);
    }
    let n = m.nrows();
    let schur = Schur::try_new(m.clone(), f64::EPSILON, EIG_MAX_ITER)
        .ok_or(Error::Convergence { residual: f64::NAN })?;
    let (q, t) = schur.unpack();
    let tnorm = t.norm().max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * tnorm;

    let mut x_all = ComplexMatrix::zeros(n, n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let mut x = vec![C64::new(0.0, 0.0); k + 1];
        x[k] = c64(1.0, 0.0);
        for i in (0..k).rev() {
            let mut acc = C64::new(0.0, 0.0);
            for j in (i + 1)..=k {
                acc += t[(i, j)] * x[j];
            }
            let mut d = t[(i, i)] - lambda;
            if d.norm() < small {
                d = c64(small, 0.0);
            }
            x[i] = -acc / d;
            let big = x[i].norm();
            if big > 1e150 {
                for v in x.iter_mut() {
                    *v /= big;
                }
            }
        }
        for (i, v) in x.into_iter().enumerate() {
            x_all[(i, k)] = v;
        }
    }
    let mut vectors = &q * x_all;
    for mut col in vectors.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col.unscale_mut(nrm);
        }
    }
    let values: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].norm().total_cmp(&values[a].norm()));
    let values: Vec<C64> = order.iter().map(|&i| values[i]).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);

    let residual = max_residual(m, &values, &vectors);
    if residual > tol * m.norm().max(1.0) {
        return Err(Error::Convergence { residual });
    }
    let sv = vectors.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if condition > DEFECTIVE_CONDITION {
        log::warn!("eigenvector matrix is near-defective (condition {condition:.3e})");
    }
    Ok(SpectralDecomposition {
        eigenvalues: values,
        eigenvectors: vectors,
        residual,
        condition,
    })
}

/// Complex matrix with i.i.d. standard complex Gaussian entries.
pub fn gaussian_matrix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexMatrix {
    let d = StandardNormal;
    ComplexMatrix::from_fn(n, n, |_, _| {
        let re: f64 = d.sample(rng);
        let im: f64 = d.sample(rng);
        c64(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// Haar-random unitary: QR of a Gaussian matrix with the phases of `diag(R)` divided out.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexMatrix {
    let qr = gaussian_matrix(n, rng).qr();
    let (mut q, r) = qr.unpack();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            c64(1.0, 0.0)
        };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

/// Eigenvalues uniform on the probability simplex.
pub fn uniform_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Density matrix with simplex-uniform spectrum in a Haar-random basis.
pub fn random_density_matrix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DensityMatrix {
    let p = uniform_simplex(n, rng);
    let u = haar_unitary(n, rng);
    DensityMatrix::from_populations_in_basis(&p, &u)
        .expect("random state is a valid density matrix")
}

/// `V exp(scale * Lambda) V^dagger` for a Hermitian `h`.
pub fn matrix_exp_herm(h: &HermitianOperator, scale: C64) -> Result<ComplexMatrix> {
    let sd = eigh(h)?;
    Ok(exp_from_spectrum(&sd, scale))
}

/// Matrix exponential reusing an existing Hermitian eigendecomposition.
pub fn exp_from_spectrum(sd: &SpectralDecomposition, scale: C64) -> ComplexMatrix {
    let v = &sd.eigenvectors;
    let mut left = v.clone();
    for (j, mut col) in left.column_iter_mut().enumerate() {
        col *= (scale * sd.eigenvalues[j].re).exp();
    }
    left * v.adjoint()
}

/// Kronecker product; the first factor is the most significant index.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Partial trace over the second (bath) factor of an arbitrary square matrix.
pub fn partial_trace_second(
    m: &ComplexMatrix,
    dim_s: usize,
    dim_b: usize,
) -> Result<ComplexMatrix> {
    if !m.is_square() || m.nrows() != dim_s * dim_b {
        return Err(Error::Dimension(format!(
            "cannot factor {}x{} matrix as {} x {}",
            m.nrows(),
            m.ncols(),
            dim_s,
            dim_b
        )));
    }
    Ok(ComplexMatrix::from_fn(dim_s, dim_s, |i, j| {
        (0..dim_b).map(|a| m[(i * dim_b + a, j * dim_b + a)]).sum()
    }))
}

/// `Tr_b rho` for a state on `system (x) bath`.
pub fn partial_trace_bath(
    rho: &DensityMatrix,
    dim_s: usize,
    dim_b: usize,
) -> Result<DensityMatrix> {
    DensityMatrix::from_numerical(partial_trace_second(rho.matrix(), dim_s, dim_b)?)
}

/// Sum of singular values.
pub fn trace_norm(a: &ComplexMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().sum()
}

/// Largest singular value (induced 2-norm).
pub fn op2norm(a: &ComplexMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Real-matrix induced 2-norm.
pub fn op2norm_real(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Row-major vectorization: entry `(m, n)` goes to `m * N + n`.
pub fn vectorize(op: &ComplexMatrix) -> ComplexVector {
    let (r, c) = op.shape();
    ComplexVector::from_fn(r * c, |idx, _| op[(idx / c, idx % c)])
}

/// Inverse of [`vectorize`] for a square `dim x dim` operator.
pub fn unvectorize(v: &ComplexVector, dim: usize) -> Result<ComplexMatrix> {
    if v.len() != dim * dim {
        return Err(Error::Dimension(format!(
            "vector of length {} is not {dim}^2",
            v.len()
        )));
    }
    Ok(ComplexMatrix::from_fn(dim, dim, |m, n| v[m * dim + n]))
}

#[inline]
pub fn vec_index(m: usize, n: usize, dim: usize) -> usize {
    m * dim + n
}

// Matrices serialize as row-major nested arrays of `[re, im]` pairs.

pub(crate) fn matrix_to_rows(m: &ComplexMatrix) -> Vec<Vec<[f64; 2]>> {
    m.row_iter()
        .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
        .collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<[f64; 2]>]) -> Result<ComplexMatrix> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(ComplexMatrix::from_fn(nr, nc, |i, j| {
        c64(rows[i][j][0], rows[i][j][1])
    }))
}

pub mod serde_matrix {
    use super::*;

    pub fn serialize<S: Serializer>(
        m: &ComplexMatrix,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<ComplexMatrix, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub mod serde_real_matrix {
    use super::*;

    pub fn serialize<S: Serializer>(
        m: &DMatrix<f64>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }
}

impl Serialize for HermitianOperator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serde_matrix::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for HermitianOperator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = serde_matrix::deserialize(d)?;
        HermitianOperator::new(m).map_err(serde::de::Error::custom)
    }
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serde_matrix::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = serde_matrix::deserialize(d)?;
        DensityMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// Pauli matrices, handy for tests and examples.
pub mod pauli {
    use super::*;

    pub fn x() -> ComplexMatrix {
        ComplexMatrix::from_row_slice(2, 2, &[c64(0., 0.), c64(1., 0.), c64(1., 0.), c64(0., 0.)])
    }

    pub fn y() -> ComplexMatrix {
        ComplexMatrix::from_row_slice(2, 2, &[c64(0., 0.), c64(0., -1.), c64(0., 1.), c64(0., 0.)])
    }

    pub fn z() -> ComplexMatrix {
        ComplexMatrix::from_row_slice(2, 2, &[c64(1., 0.), c64(0., 0.), c64(0., 0.), c64(-1., 0.)])
    }

    pub fn identity() -> ComplexMatrix {
        ComplexMatrix::identity(2, 2)
    }

    pub fn op(m: ComplexMatrix) -> HermitianOperator {
        HermitianOperator::new(m).expect("Pauli matrices are Hermitian")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn diag(v: &[f64]) -> ComplexMatrix {
        HermitianOperator::from_diagonal(v).unwrap().into_matrix()
    }

    #[test]
    fn kron_identity_and_diagonal() {
        let i2 = ComplexMatrix::identity(2, 2);
        assert_eq!(kron(&i2, &i2), ComplexMatrix::identity(4, 4));
        assert_eq!(
            kron(&diag(&[1., 2.]), &diag(&[1., 0.])),
            diag(&[1., 0., 2., 0.])
        );
    }

    #[test]
    fn partial_trace_of_bell_state_is_maximally_mixed() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = ComplexVector::from_vec(vec![c64(s, 0.), c64(0., 0.), c64(0., 0.), c64(s, 0.)]);
        let rho = DensityMatrix::pure(&psi).unwrap();
        let red = partial_trace_bath(&rho, 2, 2).unwrap();
        assert!((red.matrix() - DensityMatrix::maximally_mixed(2).matrix()).norm() < 1e-15);
    }

    #[test]
    fn partial_trace_rejects_bad_factorization() {
        let rho = DensityMatrix::maximally_mixed(6);
        assert!(matches!(
            partial_trace_bath(&rho, 4, 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn eigh_diagonal_sorted() {
        let h = HermitianOperator::from_diagonal(&[3., 1., 2.]).unwrap();
        let sd = eigh(&h).unwrap();
        assert_eq!(sd.real_eigenvalues(), vec![1., 2., 3.]);
    }

    #[test]
    fn eigh_pauli_x() {
        let sd = eigh(&pauli::op(pauli::x())).unwrap();
        assert_abs_diff_eq!(sd.eigenvalues[0].re, -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sd.eigenvalues[1].re, 1.0, epsilon = 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // (|0> - |1>)/sqrt2 up to a phase
        let v = sd.eigenvectors.column(0);
        let overlap = v[0] * s - v[1] * s;
        assert_abs_diff_eq!(overlap.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eig_general_triangular() {
        let m = ComplexMatrix::from_row_slice(
            2,
            2,
            &[c64(1., 0.), c64(1., 0.), c64(0., 0.), c64(0.5, 0.)],
        );
        let sd = eig_general(&m).unwrap();
        assert_abs_diff_eq!(sd.eigenvalues[0].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sd.eigenvalues[1].re, 0.5, epsilon = 1e-12);
        assert!(!sd.is_defective());
    }

    #[test]
    fn eig_general_flags_jordan_block() {
        let m = ComplexMatrix::from_row_slice(
            2,
            2,
            &[c64(2., 0.), c64(1., 0.), c64(0., 0.), c64(2., 0.)],
        );
        let sd = eig_general(&m).unwrap();
        assert!(sd.is_defective(), "condition {}", sd.condition);
    }

    #[test]
    fn exp_of_zero_scale_is_identity() {
        let h = pauli::op(pauli::x());
        let e = matrix_exp_herm(&h, c64(0., 0.)).unwrap();
        assert!((e - ComplexMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn exp_of_sigma_z() {
        let t = 0.37;
        let e = matrix_exp_herm(&pauli::op(pauli::z()), c64(0., t)).unwrap();
        assert!((e[(0, 0)] - C64::from_polar(1.0, t)).norm() < 1e-14);
        assert!((e[(1, 1)] - C64::from_polar(1.0, -t)).norm() < 1e-14);
        assert!(e[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn trace_norm_examples() {
        assert_abs_diff_eq!(
            trace_norm(&(diag(&[1., 0.]) - diag(&[0., 1.]))),
            2.0,
            epsilon = 1e-12
        );
        let rho = DensityMatrix::maximally_mixed(3);
        assert_abs_diff_eq!(rho.trace_distance(&rho), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            trace_norm(&(diag(&[0.75, 0.25]) - diag(&[0.5, 0.5]))),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn op2norm_examples() {
        assert_abs_diff_eq!(
            op2norm(&ComplexMatrix::identity(3, 3)),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(op2norm(&diag(&[3., -4.])), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn hermitian_constructor_rejects_asymmetry() {
        let mut m = pauli::x();
        m[(0, 1)] = c64(1.0 + 1e-9, 0.0);
        assert!(matches!(
            HermitianOperator::new(m),
            Err(Error::NotHermitian(_))
        ));
    }

    #[test]
    fn density_constructor_rejects_bad_states() {
        assert!(DensityMatrix::new(diag(&[0.6, 0.6])).is_err());
        assert!(DensityMatrix::new(diag(&[1.2, -0.2])).is_err());
        assert!(DensityMatrix::new(diag(&[0.7, 0.3])).is_ok());
    }

    #[test]
    fn vectorization_is_row_major() {
        let m = ComplexMatrix::from_fn(3, 3, |i, j| c64((10 * i + j) as f64, 0.0));
        let v = vectorize(&m);
        assert_eq!(v[vec_index(1, 2, 3)], c64(12.0, 0.0));
        assert_eq!(unvectorize(&v, 3).unwrap(), m);
    }

    #[test]
    fn json_round_trip_of_operator() {
        let h = pauli::op(pauli::y());
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, "[[[0.0,0.0],[0.0,-1.0]],[[0.0,1.0],[0.0,0.0]]]");
        let back: HermitianOperator = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
    }
}
