//! Local Hamiltonians, the random ensemble used for system, bath and
//! interaction operators, Gibbs states and the Trotter product.
//!
//! Qubit 0 is the most significant tensor factor: a term on qubit 0 of a
//! two-qubit register embeds as `h (x) I`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{
    c64, eigh, exp_from_spectrum, kron, ComplexMatrix, DensityMatrix, HermitianOperator,
    SpectralDecomposition, C64,
};

/// Minimum eigenvalue gap accepted for a sampled system Hamiltonian.
pub const MIN_SYSTEM_GAP: f64 = 1e-8;
const MAX_RESAMPLES: usize = 1000;

/// Deterministic generator for sample `index` of a run seeded with `seed`.
///
/// ChaCha20 is counter based, so each `(seed, index)` pair gets its own
/// independent stream regardless of the order in which samples run.
pub fn substream(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n choose 2`.
pub fn pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTerm")]
pub struct LocalTerm {
    pub support: Vec<usize>,
    pub block: HermitianOperator,
}

#[derive(Deserialize)]
struct RawTerm {
    support: Vec<usize>,
    block: HermitianOperator,
}

impl TryFrom<RawTerm> for LocalTerm {
    type Error = Error;
    fn try_from(raw: RawTerm) -> Result<Self> {
        LocalTerm::new(raw.support, raw.block)
    }
}

impl LocalTerm {
    pub fn new(support: Vec<usize>, block: HermitianOperator) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::invalid("term support is empty"));
        }
        for (i, q) in support.iter().enumerate() {
            if support[..i].contains(q) {
                return Err(Error::invalid(format!(
                    "qubit {q} repeated in term support"
                )));
            }
        }
        if block.dim() != 1 << support.len() {
            return Err(Error::Dimension(format!(
                "block of dim {} on {} qubits",
                block.dim(),
                support.len()
            )));
        }
        Ok(Self { support, block })
    }
}

/// A sum of terms, each acting on a few qubits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLocal")]
pub struct LocalHamiltonian {
    pub n_qubits: usize,
    /// Dimension of every term's block.
    pub locality_c: usize,
    pub terms: Vec<LocalTerm>,
}

#[derive(Deserialize)]
struct RawLocal {
    n_qubits: usize,
    locality_c: usize,
    terms: Vec<LocalTerm>,
}

impl TryFrom<RawLocal> for LocalHamiltonian {
    type Error = Error;
    fn try_from(raw: RawLocal) -> Result<Self> {
        LocalHamiltonian::new(raw.n_qubits, raw.locality_c, raw.terms)
    }
}

impl LocalHamiltonian {
    pub fn new(n_qubits: usize, locality_c: usize, terms: Vec<LocalTerm>) -> Result<Self> {
        if n_qubits == 0 {
            return Err(Error::invalid("a Hamiltonian needs at least one qubit"));
        }
        for t in &terms {
            if t.block.dim() != locality_c {
                return Err(Error::Dimension(format!(
                    "term block dim {} differs from locality {locality_c}",
                    t.block.dim()
                )));
            }
            if let Some(&q) = t.support.iter().find(|&&q| q >= n_qubits) {
                return Err(Error::invalid(format!(
                    "qubit {q} outside register of {n_qubits}"
                )));
            }
        }
        Ok(Self {
            n_qubits,
            locality_c,
            terms,
        })
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("Hamiltonian serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("Hamiltonian JSON: {e}")))
    }
}

/// Sampling scale and locality of the ensemble.
///
/// The seed is carried for bookkeeping; randomness is drawn from the stream
/// handed to the sampling functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub scale_a: f64,
    pub seed: u64,
    pub locality_c: usize,
}

impl SamplingSpec {
    pub fn new(scale_a: f64, seed: u64, locality_c: usize) -> Result<Self> {
        if !(scale_a >= 0.0 && scale_a.is_finite()) {
            return Err(Error::invalid(format!(
                "sampling scale must be >= 0, got {scale_a}"
            )));
        }
        if !locality_c.is_power_of_two() || locality_c < 2 {
            return Err(Error::invalid(format!(
                "locality {locality_c} is not a qubit block size"
            )));
        }
        Ok(Self {
            scale_a,
            seed,
            locality_c,
        })
    }
}

/// Random Hermitian block: diagonal uniform in `[-a, a]`, upper entries with
/// modulus uniform in `[0, a]` and uniform phase.
pub fn sample_block<R: Rng + ?Sized>(dim: usize, a: f64, rng: &mut R) -> HermitianOperator {
    let mut m = ComplexMatrix::zeros(dim, dim);
    for i in 0..dim {
        m[(i, i)] = c64(a * rng.random_range(-1.0..=1.0), 0.0);
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            let r = a * rng.random::<f64>();
            let phi = 2.0 * PI * rng.random::<f64>();
            let z = C64::from_polar(r, phi);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    HermitianOperator::new(m).expect("block is Hermitian by construction")
}

pub fn sample_local_term<R: Rng + ?Sized>(
    spec: &SamplingSpec,
    support: &[usize],
    rng: &mut R,
) -> Result<LocalTerm> {
    if 1 << support.len() != spec.locality_c {
        return Err(Error::Dimension(format!(
            "support of {} qubits does not match locality {}",
            support.len(),
            spec.locality_c
        )));
    }
    LocalTerm::new(
        support.to_vec(),
        sample_block(spec.locality_c, spec.scale_a, rng),
    )
}

/// Embeds every term on its support and sums.
pub fn assemble(h: &LocalHamiltonian) -> Result<HermitianOperator> {
    let n = h.n_qubits;
    let dim = h.dim();
    let mut out = ComplexMatrix::zeros(dim, dim);
    for term in &h.terms {
        let shifts: Vec<usize> = term.support.iter().map(|&q| n - 1 - q).collect();
        if term.support.iter().any(|&q| q >= n) {
            return Err(Error::invalid("term support outside register"));
        }
        let mask: usize = shifts.iter().map(|s| 1 << s).sum();
        let c = term.block.dim();
        let place = |sub: usize| -> usize {
            let w = shifts.len();
            shifts
                .iter()
                .enumerate()
                .map(|(pos, &s)| ((sub >> (w - 1 - pos)) & 1) << s)
                .sum()
        };
        let placed: Vec<usize> = (0..c).map(place).collect();
        let block = term.block.matrix();
        for rest in (0..dim).filter(|r| r & mask == 0) {
            for (ir, &pr) in placed.iter().enumerate() {
                for (ic, &pc) in placed.iter().enumerate() {
                    out[(rest | pr, rest | pc)] += block[(ir, ic)];
                }
            }
        }
    }
    HermitianOperator::new(out)
}

/// All-pairs 2-qubit Hamiltonian on `n >= 2` qubits; a single 2x2 term for `n = 1`.
pub fn sample_system<R: Rng + ?Sized>(
    n: usize,
    scale_a: f64,
    rng: &mut R,
) -> Result<LocalHamiltonian> {
    if n == 0 {
        return Err(Error::invalid("system needs at least one qubit"));
    }
    if n == 1 {
        let spec = SamplingSpec::new(scale_a, 0, 2)?;
        return LocalHamiltonian::new(1, 2, vec![sample_local_term(&spec, &[0], rng)?]);
    }
    let spec = SamplingSpec::new(scale_a, 0, 4)?;
    let mut terms = Vec::with_capacity(pairs(n));
    for i in 0..n {
        for j in (i + 1)..n {
            terms.push(sample_local_term(&spec, &[i, j], rng)?);
        }
    }
    LocalHamiltonian::new(n, 4, terms)
}

/// Sum of independent single-qubit terms on `k` qubits.
pub fn sample_bath<R: Rng + ?Sized>(
    k: usize,
    scale_a: f64,
    rng: &mut R,
) -> Result<LocalHamiltonian> {
    if k == 0 {
        return Err(Error::invalid("bath needs at least one qubit"));
    }
    let spec = SamplingSpec::new(scale_a, 0, 2)?;
    let terms = (0..k)
        .map(|q| sample_local_term(&spec, &[q], rng))
        .collect::<Result<Vec<_>>>()?;
    LocalHamiltonian::new(k, 2, terms)
}

/// Single-qubit term scale that matches the bath's spectral variance to the system's.
pub fn bath_scale(n: usize, k: usize) -> f64 {
    assert!(k >= 1, "bath must have at least one qubit");
    if n <= 1 {
        (1.0 / k as f64).sqrt()
    } else {
        (2.0 / k as f64 * pairs(n) as f64).sqrt()
    }
}

/// Ensemble spectral width of the system at unit scale; converts `beta` to `beta'`.
pub fn system_width(n: usize) -> f64 {
    if n <= 1 {
        (2.0f64 / 3.0).sqrt()
    } else {
        (4.0 / 3.0 * pairs(n) as f64).sqrt()
    }
}

/// `sqrt(Tr H^2 / dim)` of the realized operator.
pub fn spectral_width(h: &LocalHamiltonian) -> Result<f64> {
    Ok(operator_width(&assemble(h)?))
}

pub fn operator_width(h: &HermitianOperator) -> f64 {
    let m = h.matrix();
    (m.iter().map(|z| z.norm_sqr()).sum::<f64>() / h.dim() as f64).sqrt()
}

/// Gibbs populations `e^{-beta E}/Z`, shifted by the smallest energy so nothing overflows.
pub fn gibbs_weights(energies: &[f64], beta: f64) -> Vec<f64> {
    let e0 = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = energies.iter().map(|&e| (-beta * (e - e0)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn gibbs_from_spectrum(sd: &SpectralDecomposition, beta: f64) -> Result<DensityMatrix> {
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
    }
    let p = gibbs_weights(&sd.real_eigenvalues(), beta);
    DensityMatrix::from_populations_in_basis(&p, &sd.eigenvectors)
}

pub fn gibbs_state(h: &HermitianOperator, beta: f64) -> Result<DensityMatrix> {
    gibbs_from_spectrum(&eigh(h)?, beta)
}

/// Product Gibbs state of a non-interacting bath and the number of
/// elementary one-qubit operations its preparation takes (two per qubit).
#[derive(Debug, Clone)]
pub struct BathPreparation {
    pub state: DensityMatrix,
    pub elementary_ops: usize,
}

pub fn bath_gibbs_product(h_b: &LocalHamiltonian, beta: f64) -> Result<BathPreparation> {
    let k = h_b.n_qubits;
    let mut per_qubit: Vec<Option<ComplexMatrix>> = vec![None; k];
    for term in &h_b.terms {
        if term.support.len() != 1 {
            return Err(Error::invalid("bath terms must act on single qubits"));
        }
        let q = term.support[0];
        if per_qubit[q].is_some() {
            return Err(Error::invalid(format!("qubit {q} carries two bath terms")));
        }
        per_qubit[q] = Some(gibbs_state(&term.block, beta)?.into_matrix());
    }
    let mut state = ComplexMatrix::identity(1, 1);
    for (q, f) in per_qubit.into_iter().enumerate() {
        let f = f.ok_or_else(|| Error::invalid(format!("qubit {q} has no bath term")))?;
        state = kron(&state, &f);
    }
    Ok(BathPreparation {
        state: DensityMatrix::new(state)?,
        elementary_ops: 2 * k,
    })
}

/// `(prod_i e^{sigma H_i / n})^n`.
pub fn trotter_product(
    terms: &[HermitianOperator],
    sigma: C64,
    n_steps: usize,
) -> Result<ComplexMatrix> {
    let first = terms
        .first()
        .ok_or_else(|| Error::invalid("no Trotter terms"))?;
    if n_steps == 0 {
        return Err(Error::invalid("n_steps must be >= 1"));
    }
    let dim = first.dim();
    let mut step = ComplexMatrix::identity(dim, dim);
    for h in terms {
        if h.dim() != dim {
            return Err(Error::Dimension("Trotter terms differ in dimension".into()));
        }
        step *= exp_from_spectrum(&eigh(h)?, sigma / n_steps as f64);
    }
    Ok(step.pow(n_steps as u32))
}

/// System, bath and coupling operators of one joint model.
///
/// `b_op` is already centered: `Tr(B rho_b) = 0` in the bath Gibbs state at
/// the model's inverse temperature; `b_shift` is the multiple of the identity
/// that was removed.
#[derive(Debug, Clone, Serialize)]
pub struct JointModel {
    pub h_s: HermitianOperator,
    pub h_b: HermitianOperator,
    pub s_op: HermitianOperator,
    pub b_op: HermitianOperator,
    pub lambda: f64,
    pub b_shift: f64,
    /// Local form of the bath Hamiltonian when it is a non-interacting sum.
    #[serde(skip)]
    pub bath_local: Option<LocalHamiltonian>,
}

impl JointModel {
    /// Validates dimensions and centers `b_op` at inverse temperature `beta`.
    pub fn new(
        h_s: HermitianOperator,
        h_b: HermitianOperator,
        s_op: HermitianOperator,
        b_op: HermitianOperator,
        lambda: f64,
        beta: f64,
    ) -> Result<Self> {
        if s_op.dim() != h_s.dim() || b_op.dim() != h_b.dim() {
            return Err(Error::Dimension(
                "coupling operators must match system and bath dims".into(),
            ));
        }
        if !lambda.is_finite() {
            return Err(Error::NonFinite);
        }
        let rho_b = gibbs_state(&h_b, beta)?;
        let shift = b_op.expectation(&rho_b);
        Ok(Self {
            h_s,
            h_b,
            s_op,
            b_op: b_op.shifted(-shift),
            lambda,
            b_shift: shift,
            bath_local: None,
        })
    }

    pub fn from_local(
        h_s: &LocalHamiltonian,
        h_b: &LocalHamiltonian,
        s_op: &LocalHamiltonian,
        b_op: &LocalHamiltonian,
        lambda: f64,
        beta: f64,
    ) -> Result<Self> {
        let mut model = Self::new(
            assemble(h_s)?,
            assemble(h_b)?,
            assemble(s_op)?,
            assemble(b_op)?,
            lambda,
            beta,
        )?;
        model.bath_local = Some(h_b.clone());
        Ok(model)
    }

    pub fn dim_s(&self) -> usize {
        self.h_s.dim()
    }

    pub fn dim_b(&self) -> usize {
        self.h_b.dim()
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    /// Bath Gibbs state, via the product form when the bath is local.
    pub fn bath_state(&self, beta: f64) -> Result<DensityMatrix> {
        match &self.bath_local {
            Some(local) => Ok(bath_gibbs_product(local, beta)?.state),
            None => gibbs_state(&self.h_b, beta),
        }
    }
}

/// System-side draw: Hamiltonian at unit scale (non-degenerate) and coupling `S`.
#[derive(Debug, Clone)]
pub struct SystemDraw {
    pub h_s: LocalHamiltonian,
    pub s_op: LocalHamiltonian,
    pub resamples: usize,
}

/// Bath-side draw: single-qubit bath at the matched scale and coupling `B`.
#[derive(Debug, Clone)]
pub struct BathDraw {
    pub h_b: LocalHamiltonian,
    pub b_op: LocalHamiltonian,
}

/// Draws `H_s`, redrawing while its spectrum has a gap below [`MIN_SYSTEM_GAP`].
pub fn sample_nondegenerate_system<R: Rng + ?Sized>(
    n: usize,
    rng: &mut R,
) -> Result<(LocalHamiltonian, usize)> {
    let mut last_gap = 0.0;
    for attempt in 0..MAX_RESAMPLES {
        let h = sample_system(n, 1.0, rng)?;
        let gap = eigh(&assemble(&h)?)?.min_gap();
        if gap >= MIN_SYSTEM_GAP {
            if attempt > 0 {
                log::info!(
                    "system Hamiltonian resampled {attempt} time(s) for a degenerate spectrum"
                );
            }
            return Ok((h, attempt));
        }
        last_gap = gap;
    }
    Err(Error::DegenerateSpectrum { min_gap: last_gap })
}

pub fn sample_system_draw<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SystemDraw> {
    let (h_s, resamples) = sample_nondegenerate_system(n, rng)?;
    let s_op = sample_system(n, 1.0, rng)?;
    Ok(SystemDraw {
        h_s,
        s_op,
        resamples,
    })
}

pub fn sample_bath_draw<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<BathDraw> {
    let h_b = sample_bath(k, bath_scale(n, k), rng)?;
    let b_op = sample_system(k, 1.0, rng)?;
    Ok(BathDraw { h_b, b_op })
}

pub fn sample_interaction_bath<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<LocalHamiltonian> {
    sample_system(k, 1.0, rng)
}

/// One full random model drawn from a single stream.
pub fn sample_joint_model<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    lambda: f64,
    beta: f64,
    rng: &mut R,
) -> Result<JointModel> {
    let sys = sample_system_draw(n, rng)?;
    let bath = sample_bath_draw(n, k, rng)?;
    JointModel::from_local(&sys.h_s, &bath.h_b, &sys.s_op, &bath.b_op, lambda, beta)
}
