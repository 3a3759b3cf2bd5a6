//! Sampled estimation of observables and exact multi-time correlators.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matcore::{
    c64, commutator, eigh, eigvalsh, exp_from_spectrum, op2norm, trace, ComplexMatrix,
    DensityMatrix, HermitianOperator, C64,
};

/// An observable rescaled to a two-outcome POVM element.
///
/// `original = gain * shifted - shift * I` and `0 <= shifted <= I`.
#[derive(Debug, Clone, Serialize)]
pub struct NormalizedObservable {
    pub original: HermitianOperator,
    pub shifted: HermitianOperator,
    pub shift: f64,
    pub gain: f64,
    pub eigen_range: (f64, f64),
}

impl NormalizedObservable {
    /// POVM elements `(O+, I - O+)`.
    pub fn povm(&self) -> (ComplexMatrix, ComplexMatrix) {
        let e1 = self.shifted.matrix().clone();
        let e2 = ComplexMatrix::identity(e1.nrows(), e1.ncols()) - &e1;
        (e1, e2)
    }

    /// `Tr(O+ rho)`, the probability of the first outcome.
    pub fn probability(&self, rho: &DensityMatrix) -> f64 {
        self.shifted.expectation(rho)
    }

    /// Maps an estimate of `Tr(O+ rho)` back to `Tr(O rho)`.
    pub fn unshift(&self, p: f64) -> f64 {
        self.gain * p - self.shift
    }
}

pub fn normalize_observable(o: &HermitianOperator) -> Result<NormalizedObservable> {
    let e = eigvalsh(o)?;
    let (lo, hi) = (e[0], e[e.len() - 1]);
    if lo == 0.0 && hi == 0.0 {
        return Err(Error::invalid("cannot normalize the zero operator"));
    }
    let (gain, shift) = if lo >= 0.0 {
        (hi, 0.0)
    } else if hi <= 0.0 {
        (lo, 0.0)
    } else {
        (hi - lo, -lo)
    };
    let shifted = HermitianOperator::new(o.shifted(shift).matrix().unscale(gain))?;
    Ok(NormalizedObservable {
        original: o.clone(),
        shifted,
        shift,
        gain,
        eigen_range: (lo, hi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplingPlan {
    pub delta: f64,
    pub epsilon: f64,
    pub n_samples: u64,
}

/// Two-sided Hoeffding sample count `ceil(ln(2/eps) / (2 delta^2))`.
pub fn sample_count(delta: f64, epsilon: f64) -> Result<SamplingPlan> {
    if !(delta > 0.0 && delta < 1.0) || !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < delta, epsilon < 1, got {delta}, {epsilon}"
        )));
    }
    let n = ((2.0 / epsilon).ln() / (2.0 * delta * delta))
        .ceil()
        .max(1.0) as u64;
    Ok(SamplingPlan {
        delta,
        epsilon,
        n_samples: n,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub exact: f64,
    /// Guaranteed half-width `delta * |gain|` at confidence `1 - epsilon`.
    pub half_width: f64,
    pub n_samples: u64,
}

impl Estimate {
    pub fn within_tolerance(&self) -> bool {
        (self.value - self.exact).abs() <= self.half_width
    }
}

fn draw_mean<R: Rng + ?Sized>(p: f64, n: u64, rng: &mut R) -> Result<f64> {
    if !(-1e-9..=1.0 + 1e-9).contains(&p) {
        return Err(Error::invalid(format!(
            "outcome probability {p} outside [0, 1]"
        )));
    }
    let b = Binomial::new(n, p.clamp(0.0, 1.0)).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(b.sample(rng) as f64 / n as f64)
}

/// Simulates `n` single-shot POVM measurements and returns the rescaled mean.
pub fn estimate_expectation<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    o: &HermitianOperator,
    plan: &SamplingPlan,
    rng: &mut R,
) -> Result<Estimate> {
    if rho.dim() != o.dim() {
        return Err(Error::Dimension("state and observable dims differ".into()));
    }
    let norm = normalize_observable(o)?;
    let mean = draw_mean(norm.probability(rho), plan.n_samples, rng)?;
    Ok(Estimate {
        value: norm.unshift(mean),
        exact: o.expectation(rho),
        half_width: plan.delta * norm.gain.abs(),
        n_samples: plan.n_samples,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalEstimate {
    pub value: f64,
    pub exact: f64,
    /// Indices of terms measured together.
    pub groups: Vec<Vec<usize>>,
    /// State preparations used: one batch of `n_samples` per group.
    pub preparations: u64,
}

/// Greedy partition of terms into mutually commuting groups.
pub fn commuting_groups(terms: &[HermitianOperator]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, t) in terms.iter().enumerate() {
        let slot = groups.iter_mut().find(|g| {
            g.iter()
                .all(|&j| op2norm(&commutator(t.matrix(), terms[j].matrix())) < 1e-12)
        });
        match slot {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

/// Estimates `Tr(rho sum_i O_i)` term by term, sharing preparations within commuting groups.
pub fn estimate_local<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    terms: &[HermitianOperator],
    plan: &SamplingPlan,
    rng: &mut R,
) -> Result<LocalEstimate> {
    let groups = commuting_groups(terms);
    let mut value = 0.0;
    let mut exact = 0.0;
    for t in terms {
        let est = estimate_expectation(rho, t, plan, rng)?;
        value += est.value;
        exact += est.exact;
    }
    Ok(LocalEstimate {
        value,
        exact,
        preparations: groups.len() as u64 * plan.n_samples,
        groups,
    })
}

/// `e^{iHt} O e^{-iHt}`.
pub fn heisenberg(o: &HermitianOperator, h: &HermitianOperator, t: f64) -> Result<ComplexMatrix> {
    let u = exp_from_spectrum(&eigh(h)?, c64(0.0, t));
    Ok(&u * o.matrix() * u.adjoint())
}

/// `Tr(rho [O1, O2(t)])`.
pub fn correlation_2pt(
    rho: &DensityMatrix,
    o1: &HermitianOperator,
    o2: &HermitianOperator,
    h_s: &HermitianOperator,
    t: f64,
) -> Result<C64> {
    if o1.dim() != rho.dim() || o2.dim() != rho.dim() || h_s.dim() != rho.dim() {
        return Err(Error::Dimension(
            "correlation operands differ in dimension".into(),
        ));
    }
    let o2t = heisenberg(o2, h_s, t)?;
    Ok(trace(&(rho.matrix() * commutator(o1.matrix(), &o2t))))
}

/// `Tr(O1(t1) O2(t2) ... Ok(tk) rho)` in the order given.
pub fn correlation_kpt(
    rho: &DensityMatrix,
    h_s: &HermitianOperator,
    ops: &[(HermitianOperator, f64)],
) -> Result<C64> {
    if ops.is_empty() {
        return Err(Error::invalid("need at least one operator"));
    }
    let sd = eigh(h_s)?;
    let mut prod = ComplexMatrix::identity(rho.dim(), rho.dim());
    for (o, t) in ops {
        if o.dim() != rho.dim() {
            return Err(Error::Dimension("operator dim differs from state".into()));
        }
        let u = exp_from_spectrum(&sd, c64(0.0, *t));
        prod = prod * (&u * o.matrix() * u.adjoint());
    }
    Ok(trace(&(prod * rho.matrix())))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearResponse {
    /// Change of `<O2>` at time `t` caused by the kick.
    pub delta_o2: f64,
    /// `i lambda Tr(rho [O1, O2(t)])`.
    pub prediction: f64,
    pub residual: f64,
}

/// Kicks `rho` with `e^{-i lambda O1}`, evolves for `t` and compares the
/// change of `<O2>` with the first-order prediction.
pub fn linear_response_experiment(
    h_s: &HermitianOperator,
    rho: &DensityMatrix,
    o1: &HermitianOperator,
    o2: &HermitianOperator,
    lambda_kick: f64,
    t: f64,
) -> Result<LinearResponse> {
    let kick = exp_from_spectrum(&eigh(o1)?, c64(0.0, -lambda_kick));
    let sd = eigh(h_s)?;
    let evolve = exp_from_spectrum(&sd, c64(0.0, -t));
    let kicked = &kick * rho.matrix() * kick.adjoint();
    let after = &evolve * kicked * evolve.adjoint();
    let free = &evolve * rho.matrix() * evolve.adjoint();
    let delta_o2 = trace(&(o2.matrix() * (after - free))).re;
    let corr = correlation_2pt(rho, o1, o2, h_s, t)?;
    let prediction = (C64::i() * lambda_kick * corr).re;
    Ok(LinearResponse {
        delta_o2,
        prediction,
        residual: (delta_o2 - prediction).abs(),
    })
}
