//! Weak-coupling analysis of the one-round channel.
//!
//! Everything here works in the eigenbasis of the system Hamiltonian. The
//! channel splits into a diagonal sector (populations) and a nondiagonal
//! sector (coherences); to second order in the coupling the diagonal
//! sector is a stochastic matrix and each coherence decays with its own
//! factor.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::channels::{build_superoperator, channel_spectrum, Superoperator};
use crate::error::{Error, Result};
use crate::hamiltonians::{gibbs_weights, pairs, system_width, JointModel, MIN_SYSTEM_GAP};
use crate::markov2::MarkovMatrix;
use crate::matcore::{
    c64, commutator, eig_general, eigh, op2norm, serde_matrix, serde_real_matrix, trace_norm,
    ComplexMatrix, DensityMatrix, HermitianOperator, C64,
};

/// Eigenvalues and eigenvectors of a non-degenerate system Hamiltonian.
#[derive(Debug, Clone)]
pub struct SystemSpectrum {
    pub energies: Vec<f64>,
    pub basis: ComplexMatrix,
}

impl SystemSpectrum {
    pub fn new(h_s: &HermitianOperator) -> Result<Self> {
        let sd = eigh(h_s)?;
        let gap = sd.min_gap();
        if sd.dim() > 1 && gap < MIN_SYSTEM_GAP {
            return Err(Error::DegenerateSpectrum { min_gap: gap });
        }
        Ok(Self {
            energies: sd.real_eigenvalues(),
            basis: sd.eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// `<m| A |n>` for all `m, n`.
    pub fn matrix_elements(&self, a: &HermitianOperator) -> ComplexMatrix {
        self.basis.adjoint() * a.matrix() * &self.basis
    }

    pub fn gibbs_populations(&self, beta: f64) -> Vec<f64> {
        gibbs_weights(&self.energies, beta)
    }
}

/// `(S - S0) / lambda^2` in the system eigenbasis, with `S0` the free evolution over `t`.
pub fn extract_s2bar(
    s: &Superoperator,
    h_s: &HermitianOperator,
    t: f64,
    lambda: f64,
) -> Result<Superoperator> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be > 0, got {lambda}")));
    }
    let s0 = Superoperator::free_evolution(h_s, t)?;
    let v = eigh(h_s)?.eigenvectors;
    let diff = Superoperator::new(s.dim_n, (&s.matrix - &s0.matrix).unscale(lambda * lambda))?;
    Ok(diff.in_basis(&v))
}

#[derive(Debug, Clone, Serialize)]
pub struct NdEigenvalue {
    pub n: usize,
    pub m: usize,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SectorAnalysis {
    /// `S2bar_{mm,nn}` in the eigenbasis.
    #[serde(with = "serde_matrix")]
    pub d_block: ComplexMatrix,
    /// `e^{it(E_n-E_m)} + lambda^2 S2bar_{nm,nm}` for every ordered pair `n != m`.
    pub nd_eigenvalues: Vec<NdEigenvalue>,
    pub kappa_d: f64,
    pub kappa_nd: f64,
    pub perturbative_fixed_point: DensityMatrix,
    pub rate_d: f64,
    pub rate_nd: f64,
    /// Largest `|sum_m S2bar_{mm,nn}|`; zero for a trace-preserving channel.
    pub d_column_sum_error: f64,
    pub d_block_defective: bool,
}

/// Diagonalizes the diagonal sector and reads the nondiagonal eigenvalues.
///
/// Rates are `(1 - |kappa|) / c_bar`; a zero `c_bar` (no coupling) gives rate 0.
pub fn sector_analysis(
    s2bar: &Superoperator,
    spectrum: &SystemSpectrum,
    lambda: f64,
    t: f64,
    c_bar: f64,
) -> Result<SectorAnalysis> {
    let n = spectrum.dim();
    if s2bar.dim_n != n {
        return Err(Error::Dimension("channel and spectrum dims differ".into()));
    }
    let l2 = lambda * lambda;
    let d_block = ComplexMatrix::from_fn(n, n, |m, k| s2bar.entry(m, m, k, k));
    let d_column_sum_error = (0..n)
        .map(|k| d_block.column(k).iter().sum::<C64>().norm())
        .fold(0.0, f64::max);

    let p = ComplexMatrix::identity(n, n) + d_block.map(|z| z * l2);
    let sd = eig_general(&p)?;
    let unit = (0..n)
        .min_by(|&a, &b| {
            (sd.eigenvalues[a] - 1.0)
                .norm()
                .total_cmp(&(sd.eigenvalues[b] - 1.0).norm())
        })
        .expect("non-empty spectrum");
    let kappa_d = (0..n)
        .filter(|&i| i != unit)
        .map(|i| sd.eigenvalues[i].norm())
        .fold(0.0, f64::max);

    let v = sd.eigenvectors.column(unit);
    let total: C64 = v.iter().sum();
    let mut pops: Vec<f64> = v.iter().map(|z| (z / total).re).collect();
    if pops.iter().any(|&x| x < -1e-9) {
        log::warn!("perturbative fixed point has negative populations; clamping");
    }
    for x in pops.iter_mut() {
        *x = x.max(0.0);
    }
    let norm: f64 = pops.iter().sum();
    pops.iter_mut().for_each(|x| *x /= norm);
    let perturbative_fixed_point =
        DensityMatrix::from_populations_in_basis(&pops, &spectrum.basis)?;

    let e = &spectrum.energies;
    let mut nd_eigenvalues = Vec::with_capacity(n * n.saturating_sub(1));
    let mut kappa_nd = 0.0f64;
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let mu = C64::from_polar(1.0, t * (e[a] - e[b])) + s2bar.entry(a, b, a, b) * l2;
            kappa_nd = kappa_nd.max(mu.norm());
            nd_eigenvalues.push(NdEigenvalue {
                n: a,
                m: b,
                re: mu.re,
                im: mu.im,
            });
        }
    }
    let rate = |kappa: f64| {
        if c_bar > 0.0 {
            (1.0 - kappa) / c_bar
        } else {
            0.0
        }
    };
    Ok(SectorAnalysis {
        rate_d: rate(kappa_d),
        rate_nd: rate(kappa_nd),
        d_block,
        nd_eigenvalues,
        kappa_d,
        kappa_nd,
        perturbative_fixed_point,
        d_column_sum_error,
        d_block_defective: sd.is_defective(),
    })
}

/// Finite-bath correlation function as a sum of weighted frequency peaks.
#[derive(Debug, Clone, Serialize)]
pub struct BathCorrelation {
    /// `(omega, weight)` sorted by frequency, equal frequencies merged.
    pub peaks: Vec<(f64, f64)>,
}

const PEAK_MERGE_TOL: f64 = 1e-12;

/// Peaks at `omega_l - omega_k` with weight `rho_k |B_kl|^2` over bath eigenpairs.
pub fn bath_correlation(
    h_b: &HermitianOperator,
    b_op: &HermitianOperator,
    beta: f64,
) -> Result<BathCorrelation> {
    if h_b.dim() != b_op.dim() {
        return Err(Error::Dimension(
            "bath Hamiltonian and coupling dims differ".into(),
        ));
    }
    let sd = eigh(h_b)?;
    let w = sd.real_eigenvalues();
    let rho = gibbs_weights(&w, beta);
    let bk = sd.eigenvectors.adjoint() * b_op.matrix() * &sd.eigenvectors;
    let k = w.len();
    let mut raw: Vec<(f64, f64)> = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            let weight = rho[a] * bk[(a, b)].norm_sqr();
            if weight > 0.0 {
                raw.push((w[b] - w[a], weight));
            }
        }
    }
    raw.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut peaks: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
    for (om, wt) in raw {
        match peaks.last_mut() {
            Some(last) if (om - last.0).abs() <= PEAK_MERGE_TOL * (1.0 + om.abs()) => last.1 += wt,
            _ => peaks.push((om, wt)),
        }
    }
    Ok(BathCorrelation { peaks })
}

impl BathCorrelation {
    /// `h(t) = sum_peaks w e^{i omega t}`.
    pub fn eval(&self, t: f64) -> C64 {
        self.peaks
            .iter()
            .map(|&(om, w)| C64::from_polar(w, om * t))
            .sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.peaks.iter().map(|p| p.1).sum()
    }

    /// Largest `|W(-omega) - e^{-beta omega} W(omega)|` over peaks.
    pub fn kms_violation(&self, beta: f64) -> f64 {
        let weight_at = |om: f64| -> f64 {
            self.peaks
                .iter()
                .filter(|p| (p.0 - om).abs() <= 1e-9 * (1.0 + om.abs()))
                .map(|p| p.1)
                .sum()
        };
        self.peaks
            .iter()
            .map(|&(om, w)| (weight_at(-om) - (-beta * om).exp() * w).abs())
            .fold(0.0, f64::max)
    }
}

/// `(1 - cos tx)/x^2`.
fn kernel_re(x: f64, t: f64) -> f64 {
    if x == 0.0 {
        return 0.5 * t * t;
    }
    let s = (0.5 * t * x).sin();
    2.0 * s * s / (x * x)
}

/// `(tx - sin tx)/x^2`.
fn kernel_im(x: f64, t: f64) -> f64 {
    let u = t * x;
    if u.abs() < 1e-3 {
        let t3 = t * t * t;
        return t3 * x / 6.0 * (1.0 - u * u / 20.0);
    }
    (u - u.sin()) / (x * x)
}

#[derive(Debug, Clone, Serialize)]
pub struct SecondOrder {
    /// Second-order diagonal-sector matrix; columns sum to zero.
    #[serde(with = "serde_real_matrix")]
    pub q: DMatrix<f64>,
    /// Relative second-order correction of each coherence (diagonal unused).
    #[serde(with = "serde_matrix")]
    pub nu: ComplexMatrix,
}

/// Closed-form second-order diagonal block and coherence decay at time `t`.
///
/// `s_elems` are matrix elements of the system coupling in the eigenbasis.
pub fn second_order_q_nu(
    energies: &[f64],
    s_elems: &ComplexMatrix,
    corr: &BathCorrelation,
    t: f64,
) -> Result<SecondOrder> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("t must be > 0, got {t}")));
    }
    let n = energies.len();
    if s_elems.shape() != (n, n) {
        return Err(Error::Dimension(
            "coupling elements do not match spectrum".into(),
        ));
    }
    let e = energies;
    let s2 = s_elems.map(|z| z.norm_sqr());
    let mut q = DMatrix::<f64>::zeros(n, n);
    for m in 0..n {
        for k in 0..n {
            let mut acc = 0.0;
            for &(om, w) in &corr.peaks {
                let mut v = s2[(m, k)] * kernel_re(om - e[k] + e[m], t);
                if m == k {
                    v -= (0..n)
                        .map(|l| s2[(k, l)] * kernel_re(om - e[k] + e[l], t))
                        .sum::<f64>();
                }
                acc += w * v;
            }
            q[(m, k)] = 2.0 * acc;
        }
    }
    let f = |om: f64, a: usize| -> C64 {
        (0..n)
            .map(|l| {
                let x = om - e[a] + e[l];
                c64(kernel_re(x, t), kernel_im(x, t)) * s2[(l, a)]
            })
            .sum()
    };
    let mut nu = ComplexMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let diag = s_elems[(a, a)].re * s_elems[(b, b)].re;
            nu[(a, b)] = corr
                .peaks
                .iter()
                .map(|&(om, w)| {
                    (c64(2.0 * diag * kernel_re(om, t), 0.0) - f(om, a) - f(om, b).conj()) * w
                })
                .sum();
        }
    }
    Ok(SecondOrder { q, nu })
}

/// Smooth bath spectral density.
pub trait SpectralDensity: Send + Sync {
    fn eval(&self, omega: f64) -> f64;

    /// Half-width of a window outside which the density is negligible.
    fn cutoff(&self) -> f64 {
        let peak = (-200..=200)
            .map(|i| self.eval(i as f64 * 0.1))
            .fold(0.0, f64::max);
        let mut w = 1.0;
        while w < 1e4 {
            if self.eval(w) <= 1e-17 * peak && self.eval(-w) <= 1e-17 * peak {
                return w;
            }
            w *= 1.25;
        }
        f64::INFINITY
    }
}

/// `scale * e^{beta w/2} * e^{-w^2/(2 sigma^2)}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GaussianKms {
    pub beta: f64,
    pub scale: f64,
    pub sigma: f64,
}

impl SpectralDensity for GaussianKms {
    fn eval(&self, w: f64) -> f64 {
        self.scale * (0.5 * self.beta * w - w * w / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// `scale * e^{beta w/2} * sech(w)`; integrable for `beta < 2`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SechKms {
    pub beta: f64,
    pub scale: f64,
}

impl SpectralDensity for SechKms {
    fn eval(&self, w: f64) -> f64 {
        // e^{bw/2}/cosh(w) = 2 e^{bw/2 - |w|} / (1 + e^{-2|w|})
        let a = w.abs();
        self.scale * 2.0 * (0.5 * self.beta * w - a).exp() / (1.0 + (-2.0 * a).exp())
    }
}

/// Any closure as a spectral density.
#[derive(Clone)]
pub struct FnDensity(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl SpectralDensity for FnDensity {
    fn eval(&self, w: f64) -> f64 {
        (self.0)(w)
    }
}

/// Largest relative `|h(-w) - e^{-beta w} h(w)|` over probe frequencies.
pub fn kms_violation(h: &dyn SpectralDensity, beta: f64, probes: &[f64]) -> f64 {
    probes
        .iter()
        .map(|&w| {
            let lhs = h.eval(-w);
            let rhs = (-beta * w).exp() * h.eval(w);
            (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

const KMS_PROBES: [f64; 9] = [0.0, 0.1, 0.3, 0.7, 1.0, 1.7, 2.5, 4.0, 6.0];

/// `P \int h(w)/(w - a) dw` by excluding `(a - delta, a + delta)` and
/// extrapolating `delta -> 0`.
///
/// The excluded-interval integral is `I(delta) = PV - c1 delta - c3 delta^3 - ...`;
/// three halvings of `delta` remove the first two error terms.
pub fn principal_value(h: &dyn SpectralDensity, a: f64, delta: f64) -> Result<f64> {
    let cutoff = h.cutoff();
    if !cutoff.is_finite() {
        return Err(Error::invalid(
            "spectral density does not decay; principal value undefined",
        ));
    }
    let reach = cutoff + a.abs();
    let g = |x: f64| (h.eval(a + x) - h.eval(a - x)) / x;
    let rule = GaussLegendre::new(NonZeroUsize::new(20).unwrap());
    let panels = 400usize;
    let excluded = |d: f64| -> f64 {
        // geometric panels resolve the neighbourhood of the pole
        let mut total = 0.0;
        let mut lo = d;
        let ratio = (reach / d).powf(1.0 / panels as f64);
        for _ in 0..panels {
            let hi = lo * ratio;
            total += rule.integrate(lo, hi, g);
            lo = hi;
        }
        total
    };
    let i1 = excluded(delta);
    let i2 = excluded(delta / 2.0);
    let i4 = excluded(delta / 4.0);
    let r1 = 2.0 * i2 - i1;
    let r2 = 2.0 * i4 - i2;
    Ok((8.0 * r2 - r1) / 7.0)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConditionMargins {
    pub condition1: f64,
    pub condition2: f64,
    /// Rescaled time for the model size, when known.
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdealizedKernel {
    pub p_matrix: MarkovMatrix,
    /// Coherence decay factors with the free phase removed.
    #[serde(with = "serde_matrix")]
    pub mu_offdiag: ComplexMatrix,
    pub conditions: ConditionMargins,
    pub detailed_balance_error: f64,
    pub stationarity_error: f64,
}

/// Idealized-limit stochastic matrix and decay factors for a smooth KMS density.
pub fn idealized_limit(
    energies: &[f64],
    s_elems: &ComplexMatrix,
    htilde: &dyn SpectralDensity,
    beta: f64,
    lambda2t: f64,
) -> Result<IdealizedKernel> {
    let n = energies.len();
    if s_elems.shape() != (n, n) {
        return Err(Error::Dimension(
            "coupling elements do not match spectrum".into(),
        ));
    }
    let kms = kms_violation(htilde, beta, &KMS_PROBES);
    if kms > 1e-10 {
        return Err(Error::invalid(format!(
            "spectral density violates KMS (relative error {kms:.2e})"
        )));
    }
    let e = energies;
    let s2 = s_elems.map(|z| z.norm_sqr());
    let c = 2.0 * PI * lambda2t;

    let mut p = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        for m in 0..n {
            if m != k {
                p[(m, k)] = c * s2[(m, k)] * htilde.eval(e[k] - e[m]);
            }
        }
        let out: f64 = (0..n).filter(|&m| m != k).map(|m| p[(m, k)]).sum();
        p[(k, k)] = 1.0 - out;
    }

    let re_g: Vec<f64> = (0..n)
        .map(|a| (0..n).map(|l| s2[(l, a)] * htilde.eval(e[a] - e[l])).sum())
        .collect();
    let condition1 = re_g.iter().map(|g| c * g).fold(0.0, f64::max);
    let h0 = htilde.eval(0.0);
    let mut condition2 = 0.0f64;
    for a in 0..n {
        for b in 0..n {
            let v = -s_elems[(a, a)].re * s_elems[(b, b)].re * h0 + 0.5 * re_g[a] + 0.5 * re_g[b];
            condition2 = condition2.max(PI * lambda2t * v.abs());
        }
    }
    if condition1 >= 1.0 || condition2 >= 1.0 {
        log::warn!("validity margins exceeded: condition 1 = {condition1:.3}, condition 2 = {condition2:.3}");
    }

    let im_g: Vec<f64> = (0..n)
        .map(|a| -> Result<f64> {
            let mut acc = 0.0;
            for l in 0..n {
                if s2[(l, a)] > 0.0 {
                    acc += s2[(l, a)] * principal_value(htilde, e[a] - e[l], 1e-2)?;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut mu = ComplexMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            mu[(a, b)] = c64(
                1.0 + 2.0 * PI * lambda2t * s_elems[(a, a)].re * s_elems[(b, b)].re * h0,
                0.0,
            ) - c64(PI * re_g[a], im_g[a]) * lambda2t
                - c64(PI * re_g[b], -im_g[b]) * lambda2t;
        }
    }

    let pi = gibbs_weights(energies, beta);
    let mut detailed_balance_error = 0.0f64;
    for a in 0..n {
        for b in 0..n {
            detailed_balance_error =
                detailed_balance_error.max((p[(a, b)] * pi[b] - p[(b, a)] * pi[a]).abs());
        }
    }
    let stationarity_error = (0..n)
        .map(|m| ((0..n).map(|k| p[(m, k)] * pi[k]).sum::<f64>() - pi[m]).abs())
        .sum();

    Ok(IdealizedKernel {
        p_matrix: MarkovMatrix::new_unchecked(p),
        mu_offdiag: mu,
        conditions: ConditionMargins {
            condition1,
            condition2,
            c: None,
        },
        detailed_balance_error,
        stationarity_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidityConditions {
    /// Rescaled time: the multi-qubit formula for `n >= 2`, `c1` for `n = 1`.
    pub c: f64,
    pub c1: f64,
    pub beta_prime: f64,
}

/// `16 pi / (3 sqrt 3)`.
pub fn c_prefactor(n: usize, k: usize) -> f64 {
    let kk = pairs(k) as f64;
    if n <= 1 {
        8.0 * PI * 2f64.sqrt() / (3.0 * 3f64.sqrt()) * kk
    } else {
        16.0 * PI / (3.0 * 3f64.sqrt()) * kk * (pairs(n) as f64).sqrt()
    }
}

pub fn validity_conditions(
    n: usize,
    k: usize,
    lambda: f64,
    t: f64,
    beta: f64,
) -> Result<ValidityConditions> {
    if n == 0 || k < 2 {
        return Err(Error::invalid(format!(
            "validity estimates need n >= 1 and k >= 2, got n={n}, k={k}"
        )));
    }
    let l2t = lambda * lambda * t;
    Ok(ValidityConditions {
        c: l2t * c_prefactor(n, k),
        c1: l2t * c_prefactor(1, k),
        beta_prime: beta * system_width(n),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ZenoPoint {
    pub t: f64,
    pub lambda: f64,
    /// `||rho_0 - I/N||_tr`, `NaN` if the fixed point was ambiguous.
    pub distance_to_mixed: f64,
    /// `||S(I/N) - I/N||_tr`.
    pub mixed_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZenoProbe {
    pub points: Vec<ZenoPoint>,
    /// `H_s` and `S` commute, so uniqueness is not expected.
    pub commuting: bool,
    /// Distances strictly decrease along the schedule; `None` when not asserted.
    pub strictly_decreasing: Option<bool>,
}

/// Fixed-point distance to `I/N` along a schedule of shrinking `t` at fixed `lambda^2 t`.
pub fn inverse_zeno_probe(
    model: &JointModel,
    lambda2t: f64,
    schedule: &[f64],
    beta: f64,
) -> Result<ZenoProbe> {
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid(
            "Zeno schedule must be strictly descending in t",
        ));
    }
    let rho_b = model.bath_state(beta)?;
    let b2 = (model.b_op.matrix() * model.b_op.matrix() * rho_b.matrix())
        .trace()
        .re;
    if b2 <= 0.0 {
        return Err(Error::invalid("bath coupling has zero second moment"));
    }
    let commuting = op2norm(&commutator(model.h_s.matrix(), model.s_op.matrix())) < 1e-10;
    let n = model.dim_s();
    let mixed = DensityMatrix::maximally_mixed(n);
    let mut points = Vec::with_capacity(schedule.len());
    for &t in schedule {
        let lambda = (lambda2t / t).sqrt();
        let s = build_superoperator(&model.with_lambda(lambda), t, beta)?;
        let distance_to_mixed = match channel_spectrum(&s) {
            Ok(cs) => cs.fixed_point.trace_distance(&mixed),
            Err(Error::AmbiguousFixedPoint { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        let mixed_residual = trace_norm(&(s.apply(mixed.matrix())? - mixed.matrix()));
        points.push(ZenoPoint {
            t,
            lambda,
            distance_to_mixed,
            mixed_residual,
        });
    }
    let strictly_decreasing = if commuting {
        None
    } else {
        Some(
            points
                .windows(2)
                .all(|w| w[1].distance_to_mixed < w[0].distance_to_mixed),
        )
    };
    Ok(ZenoProbe {
        points,
        commuting,
        strictly_decreasing,
    })
}
