//! System-bath channels as `N^2 x N^2` superoperator matrices.
//!
//! The channel of one round is
//! `chi -> Tr_b[e^{iHt} (chi (x) rho_b) e^{-iHt}]`, built exactly from the
//! joint eigendecomposition.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonians::{substream, JointModel};
use crate::matcore::{
    c64, eig_general, eigh, eigvalsh, gaussian_matrix, hermitize, kron, matrix_exp_herm,
    random_density_matrix, serde_matrix, trace, trace_norm, unvectorize, vectorize, ComplexMatrix,
    DensityMatrix, HermitianOperator, SpectralDecomposition, C64,
};

/// Default cap on `n + k` for the dense joint Hamiltonian.
pub const DEFAULT_QUBIT_CAP: usize = 12;
/// Eigenvalues closer than this to 1 count as unit eigenvalues.
pub const UNIT_EIGENVALUE_TOL: f64 = 1e-9;
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Superoperator {
    pub dim_n: usize,
    #[serde(with = "serde_matrix")]
    pub matrix: ComplexMatrix,
}

impl Superoperator {
    pub fn new(dim_n: usize, matrix: ComplexMatrix) -> Result<Self> {
        let d = dim_n * dim_n;
        if matrix.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "superoperator on dim {dim_n} must be {d}x{d}, got {:?}",
                matrix.shape()
            )));
        }
        Ok(Self { dim_n, matrix })
    }

    pub fn identity(dim_n: usize) -> Self {
        let d = dim_n * dim_n;
        Self {
            dim_n,
            matrix: ComplexMatrix::identity(d, d),
        }
    }

    /// Probes a linear map on all matrix units.
    pub fn from_map<F>(dim_n: usize, f: F) -> Result<Self>
    where
        F: Fn(&ComplexMatrix) -> ComplexMatrix,
    {
        let d = dim_n * dim_n;
        let mut m = ComplexMatrix::zeros(d, d);
        for k in 0..dim_n {
            for l in 0..dim_n {
                let mut unit = ComplexMatrix::zeros(dim_n, dim_n);
                unit[(k, l)] = c64(1.0, 0.0);
                let out = f(&unit);
                if out.shape() != (dim_n, dim_n) {
                    return Err(Error::Dimension(
                        "map changes the operator dimension".into(),
                    ));
                }
                m.set_column(k * dim_n + l, &vectorize(&out));
            }
        }
        Ok(Self { dim_n, matrix: m })
    }

    /// `chi -> sum_i K_i chi K_i^dagger`.
    pub fn from_kraus(ops: &[ComplexMatrix]) -> Result<Self> {
        let first = ops
            .first()
            .ok_or_else(|| Error::invalid("no Kraus operators"))?;
        let n = first.nrows();
        let mut m = ComplexMatrix::zeros(n * n, n * n);
        for k in ops {
            if k.shape() != (n, n) {
                return Err(Error::Dimension("Kraus operators differ in shape".into()));
            }
            m += kron(k, &k.map(|z| z.conj()));
        }
        Ok(Self {
            dim_n: n,
            matrix: m,
        })
    }

    /// `chi -> U chi U^dagger`.
    pub fn unitary_conjugation(u: &ComplexMatrix) -> Result<Self> {
        Self::from_kraus(std::slice::from_ref(u))
    }

    /// `chi -> Tr(chi) I/N`.
    pub fn depolarizing(dim_n: usize) -> Self {
        Self::from_map(dim_n, |x| {
            ComplexMatrix::identity(dim_n, dim_n) * (trace(x) / dim_n as f64)
        })
        .expect("depolarizing map preserves dimension")
    }

    /// Free evolution `chi -> e^{iHt} chi e^{-iHt}`.
    pub fn free_evolution(h: &HermitianOperator, t: f64) -> Result<Self> {
        Self::unitary_conjugation(&matrix_exp_herm(h, c64(0.0, t))?)
    }

    pub fn apply(&self, x: &ComplexMatrix) -> Result<ComplexMatrix> {
        if x.shape() != (self.dim_n, self.dim_n) {
            return Err(Error::Dimension(format!(
                "operator {:?} applied to channel on dim {}",
                x.shape(),
                self.dim_n
            )));
        }
        unvectorize(&(&self.matrix * vectorize(x)), self.dim_n)
    }

    pub fn apply_density(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        DensityMatrix::from_numerical(self.apply(rho.matrix())?)
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &Superoperator) -> Result<Self> {
        if self.dim_n != first.dim_n {
            return Err(Error::Dimension(
                "composing channels of different dims".into(),
            ));
        }
        Ok(Self {
            dim_n: self.dim_n,
            matrix: &self.matrix * &first.matrix,
        })
    }

    /// `sum_{kl} |k><l| (x) S(|k><l|)`.
    pub fn choi(&self) -> ComplexMatrix {
        let n = self.dim_n;
        ComplexMatrix::from_fn(n * n, n * n, |r, c| {
            let (k, m) = (r / n, r % n);
            let (l, nn) = (c / n, c % n);
            self.matrix[(m * n + nn, k * n + l)]
        })
    }

    /// The same map written in the basis given by the columns of unitary `v`.
    pub fn in_basis(&self, v: &ComplexMatrix) -> Self {
        let left = kron(&v.adjoint(), &v.transpose());
        let right = kron(v, &v.map(|z| z.conj()));
        Self {
            dim_n: self.dim_n,
            matrix: left * &self.matrix * right,
        }
    }

    /// `S_{mn,kl}`.
    pub fn entry(&self, m: usize, n: usize, k: usize, l: usize) -> C64 {
        let d = self.dim_n;
        self.matrix[(m * d + n, k * d + l)]
    }
}

/// `H_s (x) 1 + 1 (x) H_b + lambda S (x) B`.
pub fn build_joint_hamiltonian(model: &JointModel) -> Result<HermitianOperator> {
    build_joint_hamiltonian_capped(model, DEFAULT_QUBIT_CAP)
}

pub fn build_joint_hamiltonian_capped(
    model: &JointModel,
    cap_qubits: usize,
) -> Result<HermitianOperator> {
    let (n, k) = (model.dim_s(), model.dim_b());
    let joint = n.checked_mul(k).unwrap_or(usize::MAX);
    if cap_qubits < usize::BITS as usize && joint > 1usize << cap_qubits {
        return Err(Error::TooLarge {
            qubits: joint.next_power_of_two().trailing_zeros() as usize,
            cap: cap_qubits,
        });
    }
    let ik = ComplexMatrix::identity(k, k);
    let in_ = ComplexMatrix::identity(n, n);
    let h = kron(model.h_s.matrix(), &ik)
        + kron(&in_, model.h_b.matrix())
        + kron(model.s_op.matrix(), model.b_op.matrix()) * c64(model.lambda, 0.0);
    HermitianOperator::new(hermitize(&h))
}

/// Exact one-round channel at interaction time `t` with a fresh bath at `beta`.
pub fn build_superoperator(model: &JointModel, t: f64, beta: f64) -> Result<Superoperator> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!(
            "interaction time must be >= 0, got {t}"
        )));
    }
    ChannelFactory::new(model, beta)?.at(t)
}

/// `chi -> Tr_b[U (chi (x) rho_b) U^dagger]`.
pub fn channel_from_unitary(
    u: &ComplexMatrix,
    rho_b: &DensityMatrix,
    dim_s: usize,
) -> Result<Superoperator> {
    let dim_b = rho_b.dim();
    if u.shape() != (dim_s * dim_b, dim_s * dim_b) {
        return Err(Error::Dimension(
            "unitary does not match system and bath dims".into(),
        ));
    }
    let l = bath_factor(rho_b)?;
    let g = u * kron(&ComplexMatrix::identity(dim_s, dim_s), &l);
    channel_from_dilation(&g, dim_s, dim_b)
}

// rho_b = L L^dagger with L = Phi sqrt(p)
fn bath_factor(rho_b: &DensityMatrix) -> Result<ComplexMatrix> {
    let bsd = eigh(&HermitianOperator::new(rho_b.matrix().clone())?)?;
    let mut l = bsd.eigenvectors.clone();
    for (j, mut col) in l.column_iter_mut().enumerate() {
        col *= c64(bsd.eigenvalues[j].re.max(0.0).sqrt(), 0.0);
    }
    Ok(l)
}

// g = U (1 (x) L); R_k[m, a*K + j] = g[m*K + a, k*K + j] and S(|k><l|) = R_k R_l^dagger
fn channel_from_dilation(g: &ComplexMatrix, dim_s: usize, dim_b: usize) -> Result<Superoperator> {
    let reshaped: Vec<ComplexMatrix> = (0..dim_s)
        .into_par_iter()
        .map(|k| {
            ComplexMatrix::from_fn(dim_s, dim_b * dim_b, |m, idx| {
                g[(m * dim_b + idx / dim_b, k * dim_b + idx % dim_b)]
            })
        })
        .collect();
    let columns: Vec<ComplexMatrix> = (0..dim_s * dim_s)
        .into_par_iter()
        .map(|kl| {
            let (k, l) = (kl / dim_s, kl % dim_s);
            &reshaped[k] * reshaped[l].adjoint()
        })
        .collect();
    let d = dim_s * dim_s;
    let mut m = ComplexMatrix::zeros(d, d);
    for (kl, out) in columns.iter().enumerate() {
        m.set_column(kl, &vectorize(out));
    }
    Superoperator::new(dim_s, m)
}

/// Channels of one model at many interaction times, sharing one joint diagonalization.
#[derive(Debug, Clone)]
pub struct ChannelFactory {
    dim_s: usize,
    dim_b: usize,
    energies: Vec<f64>,
    vectors: ComplexMatrix,
    // V^dagger (1 (x) L)
    weighted: ComplexMatrix,
}

impl ChannelFactory {
    pub fn new(model: &JointModel, beta: f64) -> Result<Self> {
        Self::with_cap(model, beta, DEFAULT_QUBIT_CAP)
    }

    pub fn with_cap(model: &JointModel, beta: f64, cap_qubits: usize) -> Result<Self> {
        let h = build_joint_hamiltonian_capped(model, cap_qubits)?;
        let sd = eigh(&h)?;
        let l = bath_factor(&model.bath_state(beta)?)?;
        let (dim_s, dim_b) = (model.dim_s(), model.dim_b());
        let weighted = sd.eigenvectors.adjoint() * kron(&ComplexMatrix::identity(dim_s, dim_s), &l);
        Ok(ChannelFactory {
            dim_s,
            dim_b,
            energies: sd.real_eigenvalues(),
            vectors: sd.eigenvectors,
            weighted,
        })
    }

    pub fn dim_s(&self) -> usize {
        self.dim_s
    }

    pub fn at(&self, t: f64) -> Result<Superoperator> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::invalid(format!(
                "interaction time must be >= 0, got {t}"
            )));
        }
        let mut scaled = self.weighted.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= C64::from_polar(1.0, self.energies[i] * t);
        }
        channel_from_dilation(&(&self.vectors * scaled), self.dim_s, self.dim_b)
    }
}

/// Worst-case violations of the channel properties; all should be ~0.
#[derive(Debug, Clone, Serialize)]
pub struct TcpDiagnostics {
    /// `max_n |sum_m S_{mm,nn} - 1|`.
    pub column_sum: f64,
    /// `max_{k != l} |sum_m S_{mm,kl}|`.
    pub cross_sum: f64,
    /// `max(0, spectral radius - 1)`.
    pub spectral_radius_excess: f64,
    pub spectral_radius: f64,
    pub choi_min_eigenvalue: f64,
    /// Most negative output eigenvalue over random density inputs, as a positive number.
    pub positivity: f64,
    /// `max_mu min_nu |conj(mu) - nu|`.
    pub conjugate_pairing: f64,
    /// `max ||S(X^dagger) - S(X)^dagger||` on random probes.
    pub hermiticity: f64,
}

impl TcpDiagnostics {
    pub fn worst_violation(&self) -> f64 {
        [
            self.column_sum,
            self.cross_sum,
            self.spectral_radius_excess,
            (-self.choi_min_eigenvalue).max(0.0),
            self.positivity,
            self.conjugate_pairing,
            self.hermiticity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst_violation() < tol
    }
}

const PROBES: usize = 8;

pub fn verify_tcp(s: &Superoperator) -> Result<TcpDiagnostics> {
    let n = s.dim_n;
    let mut column_sum = 0.0f64;
    let mut cross_sum = 0.0f64;
    for k in 0..n {
        for l in 0..n {
            let tot: C64 = (0..n).map(|m| s.entry(m, m, k, l)).sum();
            if k == l {
                column_sum = column_sum.max((tot - 1.0).norm());
            } else {
                cross_sum = cross_sum.max(tot.norm());
            }
        }
    }
    let spec = eig_general(&s.matrix)?;
    let spectral_radius = spec
        .eigenvalues
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let conjugate_pairing = spec
        .eigenvalues
        .iter()
        .map(|mu| {
            spec.eigenvalues
                .iter()
                .map(|nu| (mu.conj() - nu).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let choi = HermitianOperator::new(hermitize(&s.choi()))?;
    let choi_min_eigenvalue = eigvalsh(&choi)?[0];

    let mut rng = substream(0x7c9_5eed, n as u64);
    let mut positivity = 0.0f64;
    let mut hermiticity = 0.0f64;
    for _ in 0..PROBES {
        let rho = random_density_matrix(n, &mut rng);
        let out = hermitize(&s.apply(rho.matrix())?);
        let min = eigvalsh(&HermitianOperator::new(out)?)?[0];
        positivity = positivity.max(-min);
        let x = gaussian_matrix(n, &mut rng);
        let lhs = s.apply(&x.adjoint())?;
        let rhs = s.apply(&x)?.adjoint();
        hermiticity = hermiticity.max((lhs - rhs).norm());
    }
    Ok(TcpDiagnostics {
        column_sum,
        cross_sum,
        spectral_radius_excess: (spectral_radius - 1.0).max(0.0),
        spectral_radius,
        choi_min_eigenvalue,
        positivity,
        conjugate_pairing,
        hermiticity,
    })
}

#[derive(Debug, Clone)]
pub struct ChannelSpectrum {
    pub decomposition: SpectralDecomposition,
    pub fixed_point: DensityMatrix,
    /// Largest-modulus eigenvalue other than the unit one.
    pub kappa: C64,
    pub defective: bool,
    /// `||S(rho_0) - rho_0||_tr`.
    pub fixed_point_residual: f64,
}

pub fn channel_spectrum(s: &Superoperator) -> Result<ChannelSpectrum> {
    let sd = eig_general(&s.matrix)?;
    let near_one = sd
        .eigenvalues
        .iter()
        .filter(|z| (*z - 1.0).norm() < UNIT_EIGENVALUE_TOL)
        .count();
    if near_one >= 2 {
        return Err(Error::AmbiguousFixedPoint { count: near_one });
    }
    let unit = (0..sd.dim())
        .min_by(|&a, &b| {
            (sd.eigenvalues[a] - 1.0)
                .norm()
                .total_cmp(&(sd.eigenvalues[b] - 1.0).norm())
        })
        .ok_or_else(|| Error::invalid("empty channel"))?;
    let x = unvectorize(&sd.eigenvectors.column(unit).into_owned(), s.dim_n)?;
    let tr = trace(&x);
    if tr.norm() < 1e-300 {
        return Err(Error::NotDensity("unit eigenvector is traceless".into()));
    }
    let fixed_point = DensityMatrix::from_numerical(x / tr)?;
    let kappa = (0..sd.dim())
        .filter(|&i| i != unit)
        .map(|i| sd.eigenvalues[i])
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(c64(0.0, 0.0));
    let residual = trace_norm(&(s.apply(fixed_point.matrix())? - fixed_point.matrix()));
    Ok(ChannelSpectrum {
        defective: sd.is_defective(),
        decomposition: sd,
        fixed_point,
        kappa,
        fixed_point_residual: residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationTrace {
    /// `states[r]` is the state after `r` rounds.
    pub states: Vec<DensityMatrix>,
    /// `deltas[r] = ||rho_{r+1} - rho_r||_tr`.
    pub deltas: Vec<f64>,
    pub observable_series: Option<Vec<f64>>,
    /// First round after which the window of deltas stayed below epsilon.
    pub converged_at: Option<usize>,
}

impl IterationTrace {
    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("trace holds the initial state")
    }

    pub fn rounds(&self) -> usize {
        self.states.len() - 1
    }

    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }

    /// Turns a non-converged trace into an error carrying the last delta.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged() {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                rounds: self.rounds(),
                final_delta: self.deltas.last().copied().unwrap_or(f64::NAN),
            })
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterationOptions {
    pub r_max: usize,
    pub epsilon: f64,
    pub window: usize,
}

impl IterationOptions {
    pub fn new(r_max: usize, epsilon: f64) -> Self {
        Self {
            r_max,
            epsilon,
            window: DEFAULT_WINDOW,
        }
    }
}

/// Finds the first `r0 >= 1` with `deltas[r0 .. r0 + window]` all below `eps`.
pub(crate) fn window_converged(deltas: &[f64], eps: f64, window: usize) -> Option<usize> {
    let w = window.max(1);
    (1..deltas.len())
        .find(|&r0| r0 + w <= deltas.len() && deltas[r0..r0 + w].iter().all(|&d| d <= eps))
}

/// Applies `s` repeatedly from `start` until the convergence window closes or `r_max` rounds.
pub fn iterate_channel(
    s: &Superoperator,
    start: DensityMatrix,
    opts: IterationOptions,
    observable: Option<&HermitianOperator>,
) -> Result<IterationTrace> {
    if opts.r_max == 0 {
        return Err(Error::invalid("r_max must be >= 1"));
    }
    let mut states = vec![start];
    let mut deltas = Vec::new();
    let mut converged_at = None;
    while states.len() <= opts.r_max {
        let next = s.apply_density(states.last().unwrap())?;
        deltas.push(next.trace_distance(states.last().unwrap()));
        states.push(next);
        if let Some(r0) = window_converged(&deltas, opts.epsilon, opts.window) {
            converged_at = Some(r0);
            break;
        }
    }
    let observable_series = observable.map(|o| states.iter().map(|r| o.expectation(r)).collect());
    Ok(IterationTrace {
        states,
        deltas,
        observable_series,
        converged_at,
    })
}

/// Algorithm I from the computational zero state.
pub fn iterate_algorithm_one(
    model: &JointModel,
    t: f64,
    beta: f64,
    opts: IterationOptions,
    observable: Option<&HermitianOperator>,
) -> Result<IterationTrace> {
    let s = build_superoperator(model, t, beta)?;
    let start = DensityMatrix::basis_state(model.dim_s(), 0)?;
    iterate_channel(&s, start, opts, observable)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceCheck {
    /// `||S^r(rho) - rho_0||_tr` for `r = 0..=r_max`.
    pub distances: Vec<f64>,
    pub kappa_abs: f64,
    /// Prefactor fitted on the first half of the rounds.
    pub fitted_c: f64,
    /// Whether `d_r <= C r |kappa|^r` held on the second half.
    pub bound_holds: bool,
    /// Least-squares slope of `ln d_r` over the fit window.
    pub log_slope: f64,
    pub log_kappa: f64,
}

/// Compares the decay of `S^r(rho)` towards the fixed point with `|kappa|^r`.
///
/// The log slope is fitted over `r in [fit_lo, r_max]`, skipping distances
/// already at round-off level.
pub fn convergence_bound_check(
    s: &Superoperator,
    rho: &DensityMatrix,
    r_max: usize,
    fit_lo: usize,
) -> Result<ConvergenceCheck> {
    let spec = channel_spectrum(s)?;
    let kappa_abs = spec.kappa.norm();
    let target = spec.fixed_point.matrix().clone();
    let mut x = rho.matrix().clone();
    let mut distances = vec![trace_norm(&(&x - &target))];
    for _ in 0..r_max {
        x = s.apply(&x)?;
        distances.push(trace_norm(&(&x - &target)));
    }
    let envelope = |r: usize| r.max(1) as f64 * kappa_abs.powi(r as i32);
    let half = (r_max / 2).max(1);
    let fitted_c = (1..=half)
        .map(|r| {
            if envelope(r) > 0.0 {
                distances[r] / envelope(r)
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let floor = 1e-12;
    let bound_holds =
        (half + 1..=r_max).all(|r| distances[r] <= fitted_c * envelope(r) * (1.0 + 1e-9) + floor);

    let pts: Vec<(f64, f64)> = (fit_lo..=r_max)
        .filter(|&r| distances[r] > floor)
        .map(|r| (r as f64, distances[r].ln()))
        .collect();
    let log_slope = if pts.len() >= 2 {
        let nf = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    } else {
        f64::NEG_INFINITY
    };
    Ok(ConvergenceCheck {
        distances,
        kappa_abs,
        fitted_c,
        bound_holds,
        log_slope,
        log_kappa: kappa_abs.ln(),
    })
}

/// `(1/a) sum_{s=0}^{a-1} e^{iHs} rho e^{-iHs}`.
pub fn dephase(rho: &DensityMatrix, h_s: &HermitianOperator, a: usize) -> Result<DensityMatrix> {
    if a == 0 {
        return Err(Error::invalid("dephasing needs a >= 1"));
    }
    if rho.dim() != h_s.dim() {
        return Err(Error::Dimension("state and Hamiltonian dims differ".into()));
    }
    let sd = eigh(h_s)?;
    let v = &sd.eigenvectors;
    let e = sd.real_eigenvalues();
    let mut x = v.adjoint() * rho.matrix() * v;
    let n = rho.dim();
    for m in 0..n {
        for l in 0..n {
            if m == l {
                continue;
            }
            let w = e[m] - e[l];
            let avg: C64 = (0..a)
                .map(|s| C64::from_polar(1.0, w * s as f64))
                .sum::<C64>()
                / a as f64;
            x[(m, l)] *= avg;
        }
    }
    DensityMatrix::from_numerical(v * x * v.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::sample_joint_model;
    use crate::matcore::{pauli, ComplexVector};
    use approx::assert_abs_diff_eq;

    fn sz_model(lambda: f64) -> JointModel {
        let z = pauli::op(pauli::z());
        JointModel::new(z.clone(), z.clone(), z.clone(), z, lambda, 0.0).unwrap()
    }

    #[test]
    fn joint_hamiltonian_sigma_z() {
        let lam = 0.3;
        // B = sigma_z is already centered at beta = 0
        let h = build_joint_hamiltonian(&sz_model(lam)).unwrap();
        let want = [
            1.0 + 1.0 + lam,
            1.0 - 1.0 - lam,
            -1.0 + 1.0 - lam,
            -1.0 - 1.0 + lam,
        ];
        for (i, w) in want.iter().enumerate() {
            assert_abs_diff_eq!(h.matrix()[(i, i)].re, *w, epsilon = 1e-15);
        }
        assert_eq!(h.matrix().iter().filter(|z| z.norm() > 0.0).count(), 4);
    }

    #[test]
    fn joint_hamiltonian_cap() {
        let model = sz_model(0.1);
        assert!(matches!(
            build_joint_hamiltonian_capped(&model, 1),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn zero_time_is_identity() {
        let mut rng = substream(11, 0);
        let model = sample_joint_model(1, 2, 0.2, 1.0, &mut rng).unwrap();
        let s = build_superoperator(&model, 0.0, 1.0).unwrap();
        assert!((s.matrix - ComplexMatrix::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn unitary_conjugation_populations() {
        let mut rng = substream(12, 0);
        let h = crate::hamiltonians::assemble(
            &crate::hamiltonians::sample_system(2, 1.0, &mut rng).unwrap(),
        )
        .unwrap();
        let u = matrix_exp_herm(&h, c64(0.0, 0.9)).unwrap();
        let s = Superoperator::unitary_conjugation(&u).unwrap();
        for m in 0..4 {
            for n in 0..4 {
                assert_abs_diff_eq!(
                    s.entry(m, m, n, n).re,
                    u[(m, n)].norm_sqr(),
                    epsilon = 1e-12
                );
            }
        }
        assert!(verify_tcp(&s).unwrap().passes(1e-9));
    }

    #[test]
    fn identity_channel_diagnostics_vanish() {
        let d = verify_tcp(&Superoperator::identity(3)).unwrap();
        assert!(d.worst_violation() < 1e-12, "{d:?}");
    }

    #[test]
    fn identity_channel_has_ambiguous_fixed_point() {
        assert!(matches!(
            channel_spectrum(&Superoperator::identity(2)),
            Err(Error::AmbiguousFixedPoint { .. })
        ));
    }

    #[test]
    fn depolarizing_spectrum() {
        let cs = channel_spectrum(&Superoperator::depolarizing(3)).unwrap();
        assert!(
            (cs.fixed_point.matrix() - DensityMatrix::maximally_mixed(3).matrix()).norm() < 1e-12
        );
        assert!(cs.kappa.norm() < 1e-12);
    }

    #[test]
    fn stationary_start_converges_at_first_round() {
        let model = sz_model(0.0);
        let trace = iterate_algorithm_one(&model, 0.7, 1.0, IterationOptions::new(50, 1e-10), None)
            .unwrap();
        assert_eq!(trace.converged_at, Some(1));
        assert!(trace.deltas.iter().all(|&d| d < 1e-14));
    }

    #[test]
    fn depolarizing_converges_in_one_round() {
        let s = Superoperator::depolarizing(2);
        let tr = iterate_channel(
            &s,
            DensityMatrix::basis_state(2, 0).unwrap(),
            IterationOptions::new(20, 1e-12),
            None,
        )
        .unwrap();
        assert_eq!(tr.converged_at, Some(1));
        assert!(
            (tr.states[1].matrix() - DensityMatrix::maximally_mixed(2).matrix()).norm() < 1e-14
        );
    }

    #[test]
    fn depolarizing_distance_vanishes_after_one_round() {
        let s = Superoperator::depolarizing(2);
        let c =
            convergence_bound_check(&s, &DensityMatrix::basis_state(2, 1).unwrap(), 4, 1).unwrap();
        assert!(c.distances[1..].iter().all(|&d| d < 1e-14));
    }

    #[test]
    fn dephase_examples() {
        let h = pauli::op(pauli::z().scale(0.5));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus =
            DensityMatrix::pure(&ComplexVector::from_vec(vec![c64(s, 0.0), c64(s, 0.0)])).unwrap();
        assert!((dephase(&plus, &h, 1).unwrap().matrix() - plus.matrix()).norm() < 1e-14);
        let out = dephase(&plus, &h, 1000).unwrap();
        assert!(out.matrix()[(0, 1)].norm() < 0.01);
        let diag = DensityMatrix::from_populations(&[0.3, 0.7]).unwrap();
        assert!((dephase(&diag, &h, 17).unwrap().matrix() - diag.matrix()).norm() < 1e-14);
    }
}
