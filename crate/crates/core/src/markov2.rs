//! Algorithm II at the level of eigenlevel populations.
//!
//! Chains are column stochastic: `P[(m, n)]` is the probability of moving
//! from level `n` to level `m`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::channels::{window_converged, IterationOptions};
use crate::error::{Error, Result};
use crate::hamiltonians::{gibbs_weights, MIN_SYSTEM_GAP};
use crate::matcore::{
    eig_general, eigh, op2norm_real, serde_real_matrix, ComplexMatrix, HermitianOperator, C64,
};

const STOCHASTIC_TOL: f64 = 1e-10;
const NEGATIVE_TOL: f64 = -1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatrixEntry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovMatrix(#[serde(with = "serde_real_matrix")] DMatrix<f64>);

impl MarkovMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "chain must be square and non-empty, got {:?}",
                m.shape()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some(x) = m.iter().find(|&&x| x < NEGATIVE_TOL) {
            return Err(Error::invalid(format!(
                "negative transition probability {x:e}"
            )));
        }
        for (j, col) in m.column_iter().enumerate() {
            let s: f64 = col.sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::invalid(format!("column {j} sums to {s}")));
            }
        }
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn from_columns(cols: &[&[f64]]) -> Result<Self> {
        let n = cols.len();
        Self::new(DMatrix::from_fn(n, n, |i, j| cols[j][i]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(p))
            .iter()
            .copied()
            .collect()
    }

    /// Largest `|column sum - 1|`.
    /// One `(row, col, value)` record per entry, column-major.
    pub fn entries(&self) -> Vec<MatrixEntry> {
        let n = self.dim();
        (0..n * n)
            .map(|i| MatrixEntry {
                row: i % n,
                col: i / n,
                value: self.0[(i % n, i / n)],
            })
            .collect()
    }

    pub fn stochasticity_error(&self) -> f64 {
        self.0
            .column_iter()
            .map(|c| (c.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn complex(&self) -> ComplexMatrix {
        self.0.map(|x| C64::new(x, 0.0))
    }
}

/// Outcome distribution of `m`-bit phase estimation for each level.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseKernel {
    pub m_bits: u32,
    /// `E' = f1 E + f2`.
    pub f1: f64,
    pub f2: f64,
    /// `p[(n, s)] = p(s|n)`.
    #[serde(with = "serde_real_matrix")]
    pub p: DMatrix<f64>,
}

impl PhaseKernel {
    pub fn outcomes(&self) -> usize {
        1 << self.m_bits
    }

    pub fn levels(&self) -> usize {
        self.p.nrows()
    }

    /// Energy that outcome `s` reports.
    pub fn outcome_energy(&self, s: usize) -> f64 {
        (2.0 * PI * s as f64 / self.outcomes() as f64 - self.f2) / self.f1
    }

    /// A kernel that reads every level's own outcome without error.
    pub fn exact(energies: &[f64], m_bits: u32) -> Result<Self> {
        let k = phase_kernel(energies, m_bits)?;
        let mut p = DMatrix::zeros(k.levels(), k.outcomes());
        let m = k.outcomes() as f64;
        for (n, &e) in energies.iter().enumerate() {
            let s = ((k.f1 * e + k.f2) * m / (2.0 * PI)).round() as usize % k.outcomes();
            p[(n, s)] = 1.0;
        }
        Ok(Self { p, ..k })
    }

    /// Largest total-variation distance of a row to its most likely outcome.
    pub fn blur(&self) -> f64 {
        self.p.row_iter().map(|r| 1.0 - r.max()).fold(0.0, f64::max)
    }
}

/// `|2^{-m} sum_l e^{i l theta}|^2` in closed form.
pub fn dirichlet_weight(theta: f64, m_outcomes: usize) -> f64 {
    let half = 0.5 * theta;
    let den = half.sin();
    let mf = m_outcomes as f64;
    if den.abs() < 1e-9 {
        return 1.0;
    }
    let r = (mf * half).sin() / (mf * den);
    r * r
}

pub fn phase_kernel(energies: &[f64], m_bits: u32) -> Result<PhaseKernel> {
    phase_kernel_with_slack(energies, m_bits, 0.0)
}

/// Phase kernel whose rescaling window is widened by `slack` times the
/// spectral range on each side, modelling an imprecise range estimate.
pub fn phase_kernel_with_slack(energies: &[f64], m_bits: u32, slack: f64) -> Result<PhaseKernel> {
    if m_bits == 0 || m_bits > 24 {
        return Err(Error::invalid(format!(
            "m_bits must be in 1..=24, got {m_bits}"
        )));
    }
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite);
    }
    if !(slack >= 0.0) {
        return Err(Error::invalid("slack must be >= 0"));
    }
    let lo = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::DegenerateSpectrum { min_gap: 0.0 });
    }
    let (lo, hi) = (lo - slack * range, hi + slack * range);
    let outcomes = 1usize << m_bits;
    let top = 2.0 * PI * (1.0 - 1.0 / outcomes as f64);
    let f1 = top / (hi - lo);
    let f2 = -f1 * lo;
    let n = energies.len();
    let mut p = DMatrix::zeros(n, outcomes);
    for (i, &e) in energies.iter().enumerate() {
        let ep = f1 * e + f2;
        for s in 0..outcomes {
            p[(i, s)] = dirichlet_weight(ep - 2.0 * PI * s as f64 / outcomes as f64, outcomes);
        }
        // the closed form sums to 1 up to rounding; renormalize that away
        let row_sum: f64 = p.row(i).sum();
        p.row_mut(i).unscale_mut(row_sum);
    }
    Ok(PhaseKernel { m_bits, f1, f2, p })
}

fn check_distinct(energies: &[f64]) -> Result<()> {
    let mut e = energies.to_vec();
    e.sort_by(f64::total_cmp);
    let gap = e
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if gap < MIN_SYSTEM_GAP {
        return Err(Error::DegenerateSpectrum { min_gap: gap });
    }
    Ok(())
}

/// Metropolis-type chain with uniform proposal weights `q` and Boltzmann acceptance.
fn metropolis(energies: &[f64], proposal: &[f64], beta: f64) -> DMatrix<f64> {
    let n = energies.len();
    let mut p = DMatrix::zeros(n, n);
    for k in 0..n {
        for m in 0..n {
            if m != k {
                let de = energies[m] - energies[k];
                p[(m, k)] = if de > 0.0 {
                    proposal[m] * (-beta * de).exp()
                } else {
                    proposal[m]
                };
            }
        }
        let out: f64 = (0..n).filter(|&m| m != k).map(|m| p[(m, k)]).sum();
        p[(k, k)] = 1.0 - out;
    }
    p
}

/// Partial-swap chain over the eigenlevels.
pub fn exact_chain(energies: &[f64], beta: f64) -> Result<MarkovMatrix> {
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
    }
    check_distinct(energies)?;
    let n = energies.len();
    MarkovMatrix::new(metropolis(energies, &vec![1.0 / n as f64; n], beta))
}

/// Exact rule applied to the energies the outcomes report.
///
/// A move to outcome `t` is proposed with the probability that a uniformly
/// chosen level reports `t`.
pub fn outcome_chain(kernel: &PhaseKernel, beta: f64) -> Result<MarkovMatrix> {
    let m = kernel.outcomes();
    let n = kernel.levels() as f64;
    let energies: Vec<f64> = (0..m).map(|s| kernel.outcome_energy(s)).collect();
    let proposal: Vec<f64> = (0..m).map(|s| kernel.p.column(s).sum() / n).collect();
    MarkovMatrix::new(metropolis(&energies, &proposal, beta))
}

/// `P'_{n->m} = sum_{s,t} p(s|n) P_{s->t} p(m|t)` with `p(m|t)` the
/// posterior of level `m` given outcome `t` under a uniform prior.
pub fn approximate_chain(outcome: &MarkovMatrix, kernel: &PhaseKernel) -> Result<MarkovMatrix> {
    let m = kernel.outcomes();
    let n = kernel.levels();
    if outcome.dim() != m {
        return Err(Error::Dimension(format!(
            "outcome chain dim {} vs {m} outcomes",
            outcome.dim()
        )));
    }
    // posterior[(level, outcome)]
    let mut posterior = DMatrix::zeros(n, m);
    for t in 0..m {
        let tot: f64 = kernel.p.column(t).sum();
        for lvl in 0..n {
            posterior[(lvl, t)] = if tot > 0.0 {
                kernel.p[(lvl, t)] / tot
            } else {
                1.0 / n as f64
            };
        }
    }
    let p = &posterior * outcome.matrix() * kernel.p.transpose();
    let mut p = p;
    for mut col in p.column_iter_mut() {
        let s = col.sum();
        col.unscale_mut(s);
    }
    MarkovMatrix::new(p)
}

/// Approximate chain for a spectrum, an inverse temperature and an `m`-bit kernel.
pub fn approximate_chain_for(
    energies: &[f64],
    beta: f64,
    kernel: &PhaseKernel,
) -> Result<MarkovMatrix> {
    check_distinct(energies)?;
    approximate_chain(&outcome_chain(kernel, beta)?, kernel)
}

/// Unit-eigenvalue eigenvector normalized to a probability vector.
pub fn stationary_distribution(p: &MarkovMatrix) -> Result<Vec<f64>> {
    let n = p.dim();
    let sd = eig_general(&p.complex())?;
    let units = sd
        .eigenvalues
        .iter()
        .filter(|z| (*z - 1.0).norm() < 1e-9)
        .count();
    if units >= 2 {
        return Err(Error::AmbiguousFixedPoint { count: units });
    }
    // (I - P) pi = 0 with one balance row replaced by normalization
    let mut a = DMatrix::<f64>::identity(n, n) - p.matrix();
    let mut rhs = DVector::<f64>::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut pi = lu
        .solve(&rhs)
        .ok_or(Error::Convergence { residual: f64::NAN })?;
    let r = &rhs - &a * &pi;
    if let Some(c) = lu.solve(&r) {
        pi += c;
    }
    let mut pi: Vec<f64> = pi.iter().map(|&x| x.max(0.0)).collect();
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= s);
    let residual: f64 = p
        .apply(&pi)
        .iter()
        .zip(&pi)
        .map(|(a, b)| (a - b).abs())
        .sum();
    if residual > 1e-12 {
        return Err(Error::Convergence { residual });
    }
    Ok(pi)
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainPerturbation {
    #[serde(with = "serde_real_matrix")]
    pub e_matrix: DMatrix<f64>,
    #[serde(with = "serde_real_matrix")]
    pub y_matrix: DMatrix<f64>,
    /// Non-unit eigenvalue of the unperturbed chain closest to 1.
    pub kappa: f64,
    /// `|1 - kappa|`.
    pub gap: f64,
    pub e_norm: f64,
    pub y_norm: f64,
    /// `sqrt(N) x / (1 - x)` with `x = |||E|||_2 / |1 - kappa|`; infinite when `x >= 1`.
    pub bound: f64,
    pub bound_valid: bool,
    /// `||pi' - pi||_1`.
    pub actual: f64,
    /// `max(||YP - PY||, ||Y(1 - P) - (1 - P_inf)||)`.
    pub y_residual: f64,
}

pub fn chain_perturbation_bound(
    p: &MarkovMatrix,
    p_prime: &MarkovMatrix,
) -> Result<ChainPerturbation> {
    let n = p.dim();
    if p_prime.dim() != n {
        return Err(Error::Dimension("chains differ in dimension".into()));
    }
    let pi = stationary_distribution(p)?;
    let pi_prime = stationary_distribution(p_prime)?;
    let pinf = DMatrix::from_fn(n, n, |i, _| pi[i]);
    let id = DMatrix::<f64>::identity(n, n);
    let inv = (&id - p.matrix() + &pinf)
        .try_inverse()
        .ok_or(Error::Convergence {
            residual: f64::INFINITY,
        })?;
    let y = inv - &pinf;
    let y_residual = (&y * p.matrix() - p.matrix() * &y)
        .norm()
        .max((&y * (&id - p.matrix()) - (&id - &pinf)).norm());

    let sd = eig_general(&p.complex())?;
    let unit = (0..n)
        .min_by(|&a, &b| {
            (sd.eigenvalues[a] - 1.0)
                .norm()
                .total_cmp(&(sd.eigenvalues[b] - 1.0).norm())
        })
        .expect("non-empty chain");
    let kappa_c = (0..n)
        .filter(|&i| i != unit)
        .map(|i| sd.eigenvalues[i])
        .min_by(|a, b| (a - 1.0).norm().total_cmp(&(b - 1.0).norm()))
        .unwrap_or(C64::new(0.0, 0.0));
    let gap = (kappa_c - 1.0).norm();

    let e = p_prime.matrix() - p.matrix();
    let e_norm = op2norm_real(&e);
    let x = e_norm / gap;
    let (bound, bound_valid) = if x < 1.0 {
        ((n as f64).sqrt() * x / (1.0 - x), true)
    } else {
        (f64::INFINITY, false)
    };
    let actual = pi.iter().zip(&pi_prime).map(|(a, b)| (a - b).abs()).sum();
    Ok(ChainPerturbation {
        y_norm: op2norm_real(&y),
        e_matrix: e,
        y_matrix: y,
        kappa: kappa_c.re,
        gap,
        e_norm,
        bound,
        bound_valid,
        actual,
        y_residual,
    })
}

/// How Algorithm II reads energies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum KernelMode {
    /// Perfect energy readout: the chain is the exact chain.
    Exact,
    PhaseEstimation {
        m_bits: u32,
        slack: f64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct PopulationTrace {
    /// Populations over eigenlevels (ascending energy) after each round.
    pub populations: Vec<Vec<f64>>,
    /// `deltas[r] = ||p_{r+1} - p_r||_1`.
    pub deltas: Vec<f64>,
    pub converged_at: Option<usize>,
    pub gibbs: Vec<f64>,
    /// `||p_final - gibbs||_1`.
    pub final_deviation: f64,
    pub chain: MarkovMatrix,
}

impl PopulationTrace {
    pub fn final_populations(&self) -> &[f64] {
        self.populations
            .last()
            .expect("trace holds the initial populations")
    }

    pub fn require_converged(self) -> Result<Self> {
        match self.converged_at {
            Some(_) => Ok(self),
            None => Err(Error::NotConverged {
                rounds: self.populations.len() - 1,
                final_delta: self.deltas.last().copied().unwrap_or(f64::NAN),
            }),
        }
    }
}

/// Runs Algorithm II from the completely mixed state.
pub fn run_algorithm_two(
    h_s: &HermitianOperator,
    beta: f64,
    mode: KernelMode,
    opts: IterationOptions,
) -> Result<PopulationTrace> {
    let energies = eigh(h_s)?.real_eigenvalues();
    run_algorithm_two_on_spectrum(&energies, beta, mode, opts)
}

pub fn run_algorithm_two_on_spectrum(
    energies: &[f64],
    beta: f64,
    mode: KernelMode,
    opts: IterationOptions,
) -> Result<PopulationTrace> {
    if opts.r_max == 0 {
        return Err(Error::invalid("r_max must be >= 1"));
    }
    let chain = match mode {
        KernelMode::Exact => exact_chain(energies, beta)?,
        KernelMode::PhaseEstimation { m_bits, slack } => {
            let kernel = phase_kernel_with_slack(energies, m_bits, slack)?;
            approximate_chain_for(energies, beta, &kernel)?
        }
    };
    let n = energies.len();
    let mut populations = vec![vec![1.0 / n as f64; n]];
    let mut deltas = Vec::new();
    let mut converged_at = None;
    while populations.len() <= opts.r_max {
        let next = chain.apply(populations.last().unwrap());
        deltas.push(
            next.iter()
                .zip(populations.last().unwrap())
                .map(|(a, b)| (a - b).abs())
                .sum(),
        );
        populations.push(next);
        if let Some(r0) = window_converged(&deltas, opts.epsilon, opts.window) {
            converged_at = Some(r0);
            break;
        }
    }
    let gibbs = gibbs_weights(energies, beta);
    let final_deviation = populations
        .last()
        .unwrap()
        .iter()
        .zip(&gibbs)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(PopulationTrace {
        populations,
        deltas,
        converged_at,
        gibbs,
        final_deviation,
        chain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_phase_is_a_delta() {
        let m_bits = 3;
        // levels sit exactly on outcomes 0, 2, 5, 7 after rescaling
        let energies = [0.0, 2.0, 5.0, 7.0];
        let k = phase_kernel(&energies, m_bits).unwrap();
        for (row, s0) in [0, 2, 5, 7].iter().enumerate() {
            for s in 0..8 {
                let want = if s == *s0 { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(k.p[(row, s)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn one_bit_quarter_phase() {
        assert_abs_diff_eq!(dirichlet_weight(PI / 2.0, 2), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(dirichlet_weight(PI / 2.0 - PI, 2), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn uniform_chain_at_infinite_temperature() {
        let p = exact_chain(&[0.3, -1.0, 2.0], 0.0).unwrap();
        assert!(p.matrix().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let pi = stationary_distribution(&p).unwrap();
        assert!(pi.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-14));
    }

    #[test]
    fn two_level_chain() {
        let p = exact_chain(&[1.0, 0.0], 1.0).unwrap();
        let m = p.matrix();
        assert_abs_diff_eq!(m[(1, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 1)], (-1.0f64).exp() / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)], 1.0 - (-1.0f64).exp() / 2.0, epsilon = 1e-15);
        let g = gibbs_weights(&[1.0, 0.0], 1.0);
        assert_abs_diff_eq!(m[(1, 0)] * g[0], m[(0, 1)] * g[1], epsilon = 1e-16);
    }

    #[test]
    fn duplicate_energies_rejected() {
        assert!(matches!(
            exact_chain(&[0.0, 1.0, 1.0], 1.0),
            Err(Error::DegenerateSpectrum { .. })
        ));
    }

    #[test]
    fn hand_solved_stationary_vector() {
        let p = MarkovMatrix::from_columns(&[&[0.9, 0.1], &[0.3, 0.7]]).unwrap();
        let pi = stationary_distribution(&p).unwrap();
        assert_abs_diff_eq!(pi[0], 0.75, epsilon = 1e-14);
        assert_abs_diff_eq!(pi[1], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn identity_chain_is_ambiguous() {
        let p = MarkovMatrix::new(DMatrix::identity(3, 3)).unwrap();
        assert!(matches!(
            stationary_distribution(&p),
            Err(Error::AmbiguousFixedPoint { .. })
        ));
    }

    #[test]
    fn delta_kernel_reproduces_exact_chain() {
        let energies = [0.0, 2.0, 5.0, 7.0];
        let k = phase_kernel(&energies, 3).unwrap();
        let p = exact_chain(&energies, 0.8).unwrap();
        let pp = approximate_chain_for(&energies, 0.8, &k).unwrap();
        assert!((p.matrix() - pp.matrix()).amax() < 1e-12);
    }

    #[test]
    fn fully_blurred_kernel_is_memoryless() {
        let energies = [0.0, 0.4, 1.1];
        let mut k = phase_kernel(&energies, 2).unwrap();
        k.p.fill(0.25);
        let pp = approximate_chain_for(&energies, 1.5, &k).unwrap();
        for j in 1..3 {
            assert!((pp.matrix().column(j) - pp.matrix().column(0)).amax() < 1e-14);
        }
    }

    #[test]
    fn zero_perturbation_bound() {
        let p = exact_chain(&[0.0, 0.5, 1.7, 2.0], 1.0).unwrap();
        let b = chain_perturbation_bound(&p, &p).unwrap();
        assert_eq!(b.bound, 0.0);
        assert!(b.actual < 1e-14);
    }

    #[test]
    fn infinite_temperature_converges_immediately() {
        let tr = run_algorithm_two_on_spectrum(
            &[0.0, 0.3, 0.9, 1.4],
            0.0,
            KernelMode::PhaseEstimation {
                m_bits: 6,
                slack: 0.0,
            },
            IterationOptions::new(20, 1e-12),
        )
        .unwrap();
        assert_eq!(tr.converged_at, Some(1));
        assert!(tr.final_deviation < 1e-12);
    }
}
