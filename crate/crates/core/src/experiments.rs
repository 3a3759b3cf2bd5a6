//! Config-driven ensemble sweeps and their CSV/JSON outputs.
//!
//! Every sample draws from its own ChaCha substream, so results depend only on
//! `(config, seed)` and never on how rayon schedules the work.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{ChannelFactory, DEFAULT_QUBIT_CAP};
use crate::error::{Error, Result};
use crate::hamiltonians::gibbs_weights;
use crate::hamiltonians::{
    assemble, bath_scale, gibbs_state, sample_bath, sample_joint_model,
    sample_nondegenerate_system, sample_system, substream, system_width, JointModel,
    LocalHamiltonian,
};
use crate::markov2::{
    approximate_chain_for, chain_perturbation_bound, exact_chain, phase_kernel_with_slack,
    stationary_distribution,
};
use crate::matcore::{
    eigvalsh, kron, pauli, random_density_matrix, ComplexMatrix, DensityMatrix, HermitianOperator,
};
use crate::observables::{correlation_2pt, linear_response_experiment};
use crate::perturbation::{
    c_prefactor, extract_s2bar, inverse_zeno_probe, sector_analysis, SystemSpectrum,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DosHistogram,
    #[default]
    BathEnsemble,
    BetaSweep,
    ZenoProbe,
    Chain2Sweep,
    RandomDmDistance,
    CorrelationSweep,
}

impl ExperimentKind {
    /// File stem of the emitted CSV and summary.
    pub fn stem(self) -> &'static str {
        match self {
            ExperimentKind::DosHistogram => "dos",
            ExperimentKind::BathEnsemble => "ensemble",
            ExperimentKind::BetaSweep => "beta_sweep",
            ExperimentKind::ZenoProbe => "zeno",
            ExperimentKind::Chain2Sweep => "chain2",
            ExperimentKind::RandomDmDistance => "dm_distance",
            ExperimentKind::CorrelationSweep => "correlate",
        }
    }
}

/// What an ensemble redraws per sample besides the bath Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// `H_s`, `S` and `B` fixed; only `H_b` is redrawn.
    FixSystemAndInteraction,
    /// `H_s` fixed; `H_b`, `S` and `B` redrawn.
    #[default]
    ResampleInteraction,
}

/// Experiment description, read from JSON. Missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n: usize,
    pub k: usize,
    /// Bath sizes for `beta_sweep`; empty means `[k]`.
    pub k_list: Vec<usize>,
    /// Inverse temperatures. Single-temperature kinds use the first entry.
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub c_interval: (f64, f64),
    pub time_points: usize,
    pub samples: usize,
    pub seed: u64,
    pub sweep_mode: SweepMode,
    /// Term scale for `dos_histogram`.
    pub scale_a: f64,
    pub bins: usize,
    pub dims: Vec<usize>,
    pub m_bits: Vec<u32>,
    pub slack: f64,
    pub zeno_lambda2t: f64,
    pub zeno_schedule: Vec<f64>,
    pub t_max: f64,
    pub correlation_points: usize,
    pub lambda_kick: f64,
    pub max_joint_qubits: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::default(),
            n: 2,
            k: 3,
            k_list: Vec::new(),
            beta: vec![0.5, 1.0, 2.0, 3.0, 5.0],
            lambda: 0.003,
            c_interval: (0.0, 0.5),
            time_points: 60,
            samples: 100,
            seed: 1,
            sweep_mode: SweepMode::default(),
            scale_a: 1.0,
            bins: 20,
            dims: vec![4, 8, 16, 32, 64],
            m_bits: vec![6],
            slack: 0.0,
            zeno_lambda2t: 0.5,
            zeno_schedule: vec![0.4, 0.2, 0.1, 0.05],
            t_max: 2.0 * PI,
            correlation_points: 64,
            lambda_kick: 0.01,
            max_joint_qubits: 10,
            out_dir: None,
        }
    }
}

const MAX_SYSTEM_QUBITS: usize = 4;
const MAX_BATH_QUBITS: usize = 6;
const MAX_SPECTRUM_QUBITS: usize = 10;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn for_kind(kind: ExperimentKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| config_err(format!("invalid config: {e}")))
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    /// Bath sizes swept by `beta_sweep`.
    pub fn bath_sizes(&self) -> Vec<usize> {
        if self.k_list.is_empty() {
            vec![self.k]
        } else {
            self.k_list.clone()
        }
    }

    pub fn first_beta(&self) -> f64 {
        self.beta[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(config_err("samples must be >= 1"));
        }
        let (lo, hi) = self.c_interval;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(config_err(format!(
                "c_interval must satisfy 0 <= low < high, got ({lo}, {hi})"
            )));
        }
        if self.beta.is_empty() || self.beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(config_err(
                "beta must be a non-empty list of finite values >= 0",
            ));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(config_err(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.time_points < 2 || self.bins == 0 {
            return Err(config_err("time_points must be >= 2 and bins >= 1"));
        }
        if self.max_joint_qubits > DEFAULT_QUBIT_CAP {
            return Err(config_err(format!(
                "max_joint_qubits is capped at {DEFAULT_QUBIT_CAP}"
            )));
        }
        let joint = |k: usize| -> Result<()> {
            if self.n == 0 || self.n > MAX_SYSTEM_QUBITS {
                return Err(config_err(format!(
                    "n must be in 1..={MAX_SYSTEM_QUBITS}, got {}",
                    self.n
                )));
            }
            if !(2..=MAX_BATH_QUBITS).contains(&k) {
                return Err(config_err(format!(
                    "k must be in 2..={MAX_BATH_QUBITS}, got {k}"
                )));
            }
            if self.n + k > self.max_joint_qubits {
                return Err(config_err(format!(
                    "n + k = {} exceeds max_joint_qubits = {}",
                    self.n + k,
                    self.max_joint_qubits
                )));
            }
            Ok(())
        };
        match self.kind {
            ExperimentKind::DosHistogram => {
                if self.n == 0
                    || self.n > MAX_SPECTRUM_QUBITS
                    || self.k == 0
                    || self.k > MAX_SPECTRUM_QUBITS
                {
                    return Err(config_err(format!(
                        "dos needs 1 <= n, k <= {MAX_SPECTRUM_QUBITS}"
                    )));
                }
                if !(self.scale_a.is_finite() && self.scale_a >= 0.0) {
                    return Err(config_err("scale_a must be finite and >= 0"));
                }
            }
            ExperimentKind::BathEnsemble | ExperimentKind::ZenoProbe => joint(self.k)?,
            ExperimentKind::BetaSweep => self.bath_sizes().into_iter().try_for_each(joint)?,
            ExperimentKind::Chain2Sweep => {
                if self.n == 0 || self.n > MAX_SYSTEM_QUBITS {
                    return Err(config_err(format!("n must be in 1..={MAX_SYSTEM_QUBITS}")));
                }
                if self.m_bits.is_empty() || self.m_bits.iter().any(|&m| m == 0 || m > 16) {
                    return Err(config_err("m_bits must be a non-empty list in 1..=16"));
                }
                if !(self.slack.is_finite() && self.slack >= 0.0) {
                    return Err(config_err("slack must be finite and >= 0"));
                }
            }
            ExperimentKind::RandomDmDistance => {
                if self.dims.is_empty()
                    || self
                        .dims
                        .iter()
                        .any(|&d| d == 0 || d > 1 << MAX_SPECTRUM_QUBITS)
                {
                    return Err(config_err("dims must be a non-empty list in 1..=1024"));
                }
            }
            ExperimentKind::CorrelationSweep => {
                if self.n == 0 || self.n > MAX_SYSTEM_QUBITS {
                    return Err(config_err(format!("n must be in 1..={MAX_SYSTEM_QUBITS}")));
                }
                if !(self.t_max.is_finite() && self.t_max > 0.0) || self.correlation_points < 2 {
                    return Err(config_err("need t_max > 0 and correlation_points >= 2"));
                }
                if !self.lambda_kick.is_finite() {
                    return Err(config_err("lambda_kick must be finite"));
                }
            }
        }
        if self.kind == ExperimentKind::ZenoProbe
            && (self.zeno_schedule.is_empty()
                || self
                    .zeno_schedule
                    .iter()
                    .any(|t| !(t.is_finite() && *t > 0.0)))
        {
            return Err(config_err("zeno_schedule must hold positive times"));
        }
        Ok(())
    }
}

// statistics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// `sqrt(var / (count - 1))` with the population variance; 0 for one sample.
    pub stderr: f64,
    pub min: f64,
    pub max: f64,
}

/// Summary statistics in input order; `None` for an empty slice.
pub fn aggregate(xs: &[f64]) -> Option<Aggregate> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        (var / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Some(Aggregate {
        count: n,
        mean,
        median,
        stderr,
        min: sorted[0],
        max: sorted[n - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// `bins` equal bins over `[lo, hi]`; values outside are clamped into the end bins.
    pub fn with_range(xs: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let bins = bins.max(1);
        let edges: Vec<f64> = (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect();
        let mut counts = vec![0u64; bins];
        for &x in xs {
            let f = ((x - lo) / (hi - lo) * bins as f64).floor();
            let idx = if f.is_nan() || f < 0.0 {
                0
            } else {
                (f as usize).min(bins - 1)
            };
            counts[idx] += 1;
        }
        Self { edges, counts }
    }

    /// Bins spanning the data range, widened to unit width around a constant sample.
    pub fn of(xs: &[f64], bins: usize) -> Self {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if xs.is_empty() {
            Self::with_range(xs, 0.0, 1.0, bins)
        } else if hi > lo {
            Self::with_range(xs, lo, hi, bins)
        } else {
            Self::with_range(xs, lo - 0.5, hi + 0.5, bins)
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

// output

/// A row type with a fixed CSV header matching its serialized field order.
pub trait CsvRow: Serialize {
    const HEADER: &'static [&'static str];
}

#[derive(Debug, Clone)]
pub struct EmittedFiles {
    pub csv: PathBuf,
    pub summary: PathBuf,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_csv<R: CsvRow>(path: &Path, rows: &[R]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(R::HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Summary document: the config echo plus a kind-specific body.
#[derive(Debug, Serialize)]
struct SummaryDoc<'a, T: Serialize> {
    kind: ExperimentKind,
    seed: u64,
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_summary<T: Serialize>(path: &Path, cfg: &ExperimentConfig, body: &T) -> Result<()> {
    let doc = SummaryDoc {
        kind: cfg.kind,
        seed: cfg.seed,
        config: cfg,
        body,
    };
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &doc).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

/// Writes `<stem>.csv` and `<stem>_summary.json` into `dir`.
pub fn emit_results<R: CsvRow, T: Serialize>(
    dir: &Path,
    cfg: &ExperimentConfig,
    rows: &[R],
    summary: &T,
) -> Result<EmittedFiles> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let stem = cfg.kind.stem();
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}_summary.json"));
    write_csv(&csv, rows)?;
    write_summary(&json, cfg, summary)?;
    Ok(EmittedFiles { csv, summary: json })
}

// density of states

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DosRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub system_count: u64,
    pub bath_count: u64,
}

impl CsvRow for DosRow {
    const HEADER: &'static [&'static str] = &["bin_lo", "bin_hi", "system_count", "bath_count"];
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DosResult {
    pub samples: usize,
    pub system: Histogram,
    pub bath: Histogram,
    pub system_variance: f64,
    pub bath_variance: f64,
    /// `None` when the bath variance vanishes.
    pub variance_ratio: Option<f64>,
    pub system_skewness: f64,
    pub bath_skewness: f64,
    /// `sqrt(6 / samples)`, the sampling scale of the skewness over independent draws.
    pub skewness_sigma: f64,
    #[serde(skip)]
    pub system_eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub bath_eigenvalues: Vec<f64>,
}

impl DosResult {
    pub fn rows(&self) -> Vec<DosRow> {
        (0..self.system.counts.len())
            .map(|i| DosRow {
                bin_lo: self.system.edges[i],
                bin_hi: self.system.edges[i + 1],
                system_count: self.system.counts[i],
                bath_count: self.bath.counts[i],
            })
            .collect()
    }
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let skew = if var > 0.0 {
        xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n / var.powf(1.5)
    } else {
        0.0
    };
    (var, skew)
}

/// Eigenvalue histograms of sampled system and bath Hamiltonians on shared bins.
pub fn run_dos_histogram(cfg: &ExperimentConfig) -> Result<DosResult> {
    cfg.validate()?;
    let bath_a = cfg.scale_a * bath_scale(cfg.n, cfg.k);
    let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, i as u64);
            let sys = sample_system(cfg.n, cfg.scale_a, &mut rng)?;
            let bath = sample_bath(cfg.k, bath_a, &mut rng)?;
            Ok((eigvalsh(&assemble(&sys)?)?, eigvalsh(&assemble(&bath)?)?))
        })
        .collect::<Result<_>>()?;
    let system_eigenvalues: Vec<f64> = draws.iter().flat_map(|d| d.0.iter().copied()).collect();
    let bath_eigenvalues: Vec<f64> = draws.iter().flat_map(|d| d.1.iter().copied()).collect();
    let w = system_eigenvalues
        .iter()
        .chain(&bath_eigenvalues)
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let w = if w > 0.0 { w } else { 0.5 };
    let (sv, ss) = moments(&system_eigenvalues);
    let (bv, bs) = moments(&bath_eigenvalues);
    Ok(DosResult {
        samples: cfg.samples,
        system: Histogram::with_range(&system_eigenvalues, -w, w, cfg.bins),
        bath: Histogram::with_range(&bath_eigenvalues, -w, w, cfg.bins),
        system_variance: sv,
        bath_variance: bv,
        variance_ratio: (bv > 0.0).then(|| sv / bv),
        system_skewness: ss,
        bath_skewness: bs,
        skewness_sigma: (6.0 / cfg.samples as f64).sqrt(),
        system_eigenvalues,
        bath_eigenvalues,
    })
}

// bath ensembles

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub n: usize,
    pub k: usize,
    pub beta: f64,
    pub beta_prime: f64,
    pub sample: usize,
    pub d_bar: f64,
    pub r_d_bar: f64,
    pub r_nd_bar: f64,
    /// Sector eigenvalue moduli at the last grid point.
    pub kappa_d: f64,
    pub kappa_nd: f64,
}

impl CsvRow for EnsembleRecord {
    const HEADER: &'static [&'static str] = &[
        "n",
        "k",
        "beta",
        "beta_prime",
        "sample",
        "d_bar",
        "r_d_bar",
        "r_nd_bar",
        "kappa_d",
        "kappa_nd",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleHistograms {
    pub d_bar: Histogram,
    pub r_d_bar: Histogram,
    pub r_nd_bar: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n: usize,
    pub k: usize,
    pub beta: f64,
    pub beta_prime: f64,
    pub count: usize,
    /// Redraws of `H_s` forced by a degenerate spectrum.
    pub resamples: usize,
    pub d_bar: Option<Aggregate>,
    pub r_d_bar: Option<Aggregate>,
    pub r_nd_bar: Option<Aggregate>,
    pub kappa_d: Option<Aggregate>,
    pub kappa_nd: Option<Aggregate>,
    pub histograms: EnsembleHistograms,
    #[serde(skip)]
    pub records: Vec<EnsembleRecord>,
}

impl EnsembleStats {
    pub fn from_records(
        n: usize,
        k: usize,
        beta: f64,
        records: Vec<EnsembleRecord>,
        resamples: usize,
        bins: usize,
    ) -> Self {
        let col = |f: fn(&EnsembleRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
        let (d, rd, rnd) = (col(|r| r.d_bar), col(|r| r.r_d_bar), col(|r| r.r_nd_bar));
        Self {
            n,
            k,
            beta,
            beta_prime: beta * system_width(n),
            count: records.len(),
            resamples,
            d_bar: aggregate(&d),
            r_d_bar: aggregate(&rd),
            r_nd_bar: aggregate(&rnd),
            kappa_d: aggregate(&col(|r| r.kappa_d)),
            kappa_nd: aggregate(&col(|r| r.kappa_nd)),
            histograms: EnsembleHistograms {
                d_bar: Histogram::of(&d, bins),
                r_d_bar: Histogram::of(&rd, bins),
                r_nd_bar: Histogram::of(&rnd, bins),
            },
            records,
        }
    }
}

/// Rescaled-time grid: `points` values of `c` evenly spaced over `(lo, hi]` and the matching `t`.
pub fn time_grid(
    c_interval: (f64, f64),
    points: usize,
    n: usize,
    k: usize,
    lambda: f64,
) -> Vec<(f64, f64)> {
    let (lo, hi) = c_interval;
    let scale = lambda * lambda * c_prefactor(n, k);
    (1..=points)
        .map(|i| {
            let c = lo + (hi - lo) * i as f64 / points as f64;
            (c, c / scale)
        })
        .collect()
}

/// Trapezoidal average of `ys` over the abscissae `xs`.
pub fn trapezoid_mean(xs: &[f64], ys: &[f64]) -> f64 {
    let area: f64 = xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum();
    area / (xs[xs.len() - 1] - xs[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleAverages {
    pub d_bar: f64,
    pub r_d_bar: f64,
    pub r_nd_bar: f64,
    pub kappa_d: f64,
    pub kappa_nd: f64,
}

/// Time-averaged distance and rates of one joint model over a `(c, t)` grid.
pub fn analyze_model(
    model: &JointModel,
    beta: f64,
    grid: &[(f64, f64)],
    cap_qubits: usize,
) -> Result<SampleAverages> {
    let spectrum = SystemSpectrum::new(&model.h_s)?;
    let gibbs = DensityMatrix::from_populations_in_basis(
        &spectrum.gibbs_populations(beta),
        &spectrum.basis,
    )?;
    if model.lambda == 0.0 {
        // decoupled: the populations of |0><0| in the eigenbasis never move
        let pops: Vec<f64> = (0..spectrum.dim())
            .map(|m| spectrum.basis[(0, m)].norm_sqr())
            .collect();
        let frozen = DensityMatrix::from_populations_in_basis(&pops, &spectrum.basis)?;
        let d = frozen.trace_distance(&gibbs);
        return Ok(SampleAverages {
            d_bar: d,
            r_d_bar: 0.0,
            r_nd_bar: 0.0,
            kappa_d: 1.0,
            kappa_nd: 1.0,
        });
    }
    let factory = ChannelFactory::with_cap(model, beta, cap_qubits)?;
    let mut d = Vec::with_capacity(grid.len());
    let mut rd = Vec::with_capacity(grid.len());
    let mut rnd = Vec::with_capacity(grid.len());
    let mut last = (1.0, 1.0);
    for &(c, t) in grid {
        let s = factory.at(t)?;
        let s2bar = extract_s2bar(&s, &model.h_s, t, model.lambda)?;
        let sa = sector_analysis(&s2bar, &spectrum, model.lambda, t, c)?;
        if sa.kappa_d > 1.0 + 1e-9 || sa.kappa_nd > 1.0 + 1e-9 {
            log::warn!(
                "sector eigenvalue outside the unit disk at t = {t}: {} {}",
                sa.kappa_d,
                sa.kappa_nd
            );
        }
        d.push(sa.perturbative_fixed_point.trace_distance(&gibbs));
        rd.push(sa.rate_d);
        rnd.push(sa.rate_nd);
        last = (sa.kappa_d, sa.kappa_nd);
    }
    let cs: Vec<f64> = grid.iter().map(|g| g.0).collect();
    Ok(SampleAverages {
        d_bar: trapezoid_mean(&cs, &d),
        r_d_bar: trapezoid_mean(&cs, &rd),
        r_nd_bar: trapezoid_mean(&cs, &rnd),
        kappa_d: last.0,
        kappa_nd: last.1,
    })
}

/// Fixed part of an ensemble, drawn from stream 0.
#[derive(Debug, Clone)]
struct EnsembleSetup {
    h_s: LocalHamiltonian,
    s_op: LocalHamiltonian,
    b_op: LocalHamiltonian,
    resamples: usize,
}

fn ensemble_setup(cfg: &ExperimentConfig, k: usize) -> Result<EnsembleSetup> {
    let mut rng = substream(cfg.seed, 0);
    let (h_s, resamples) = sample_nondegenerate_system(cfg.n, &mut rng)?;
    let s_op = sample_system(cfg.n, 1.0, &mut rng)?;
    let b_op = sample_system(k, 1.0, &mut rng)?;
    Ok(EnsembleSetup {
        h_s,
        s_op,
        b_op,
        resamples,
    })
}

/// Model of sample `index`; the same index gives the same draws at every `beta`.
fn ensemble_model(
    cfg: &ExperimentConfig,
    setup: &EnsembleSetup,
    k: usize,
    beta: f64,
    index: usize,
) -> Result<JointModel> {
    let mut rng = substream(cfg.seed, index as u64 + 1);
    let h_b = sample_bath(k, bath_scale(cfg.n, k), &mut rng)?;
    match cfg.sweep_mode {
        SweepMode::FixSystemAndInteraction => {
            JointModel::from_local(&setup.h_s, &h_b, &setup.s_op, &setup.b_op, cfg.lambda, beta)
        }
        SweepMode::ResampleInteraction => {
            let s_op = sample_system(cfg.n, 1.0, &mut rng)?;
            let b_op = sample_system(k, 1.0, &mut rng)?;
            JointModel::from_local(&setup.h_s, &h_b, &s_op, &b_op, cfg.lambda, beta)
        }
    }
}

fn ensemble_at(cfg: &ExperimentConfig, k: usize, beta: f64) -> Result<EnsembleStats> {
    let setup = ensemble_setup(cfg, k)?;
    let grid = time_grid(cfg.c_interval, cfg.time_points, cfg.n, k, cfg.lambda);
    let beta_prime = beta * system_width(cfg.n);
    let records: Vec<EnsembleRecord> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let model = ensemble_model(cfg, &setup, k, beta, i)?;
            let a = analyze_model(&model, beta, &grid, cfg.max_joint_qubits)?;
            Ok(EnsembleRecord {
                n: cfg.n,
                k,
                beta,
                beta_prime,
                sample: i,
                d_bar: a.d_bar,
                r_d_bar: a.r_d_bar,
                r_nd_bar: a.r_nd_bar,
                kappa_d: a.kappa_d,
                kappa_nd: a.kappa_nd,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EnsembleStats::from_records(
        cfg.n,
        k,
        beta,
        records,
        setup.resamples,
        cfg.bins,
    ))
}

/// Ensemble over baths at `(n, k, beta[0])`.
pub fn run_bath_ensemble(cfg: &ExperimentConfig) -> Result<EnsembleStats> {
    cfg.validate()?;
    ensemble_at(cfg, cfg.k, cfg.first_beta())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSweep {
    /// One entry per `(k, beta)`, bath sizes outermost.
    pub points: Vec<EnsembleStats>,
}

impl BetaSweep {
    pub fn records(&self) -> Vec<EnsembleRecord> {
        self.points
            .iter()
            .flat_map(|p| p.records.iter().cloned())
            .collect()
    }

    pub fn at(&self, k: usize, beta: f64) -> Option<&EnsembleStats> {
        self.points.iter().find(|p| p.k == k && p.beta == beta)
    }
}

pub fn run_beta_sweep(cfg: &ExperimentConfig) -> Result<BetaSweep> {
    cfg.validate()?;
    let mut points = Vec::new();
    for k in cfg.bath_sizes() {
        for &beta in &cfg.beta {
            points.push(ensemble_at(cfg, k, beta)?);
        }
    }
    Ok(BetaSweep { points })
}

// random density matrices

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmRecord {
    pub dim: usize,
    pub sample: usize,
    pub distance: f64,
}

impl CsvRow for DmRecord {
    const HEADER: &'static [&'static str] = &["dim", "sample", "distance"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmRow {
    pub dim: usize,
    pub mean: f64,
    pub stderr: f64,
    pub median: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmDistanceTable {
    pub rows: Vec<DmRow>,
    #[serde(skip)]
    pub records: Vec<DmRecord>,
}

/// Mean trace distance between independent random density matrices per dimension.
pub fn run_random_dm_distance(cfg: &ExperimentConfig) -> Result<DmDistanceTable> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &dim in &cfg.dims {
        let recs: Vec<DmRecord> = (0..cfg.samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(cfg.seed, ((dim as u64) << 32) | i as u64);
                let a = random_density_matrix(dim, &mut rng);
                let b = random_density_matrix(dim, &mut rng);
                DmRecord {
                    dim,
                    sample: i,
                    distance: a.trace_distance(&b),
                }
            })
            .collect();
        let xs: Vec<f64> = recs.iter().map(|r| r.distance).collect();
        let agg = aggregate(&xs).expect("samples >= 1");
        rows.push(DmRow {
            dim,
            mean: agg.mean,
            stderr: agg.stderr,
            median: agg.median,
            count: agg.count,
        });
        records.extend(recs);
    }
    Ok(DmDistanceTable { rows, records })
}

// inverse Zeno

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZenoRecord {
    pub sample: usize,
    pub t: f64,
    pub lambda: f64,
    pub distance_to_mixed: f64,
    pub mixed_residual: f64,
}

impl CsvRow for ZenoRecord {
    const HEADER: &'static [&'static str] = &[
        "sample",
        "t",
        "lambda",
        "distance_to_mixed",
        "mixed_residual",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZenoSummary {
    pub count: usize,
    /// Models redrawn because `H_s` and `S` commuted.
    pub commuting_redraws: usize,
    pub strictly_decreasing: Vec<bool>,
    pub decreasing_fraction: f64,
    #[serde(skip)]
    pub records: Vec<ZenoRecord>,
}

const MAX_COMMUTING_REDRAWS: usize = 100;

pub fn run_zeno(cfg: &ExperimentConfig) -> Result<ZenoSummary> {
    cfg.validate()?;
    let beta = cfg.first_beta();
    let per_sample: Vec<(usize, bool, Vec<ZenoRecord>)> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, i as u64);
            for redraws in 0..MAX_COMMUTING_REDRAWS {
                let model = sample_joint_model(cfg.n, cfg.k, 0.0, beta, &mut rng)?;
                let probe =
                    inverse_zeno_probe(&model, cfg.zeno_lambda2t, &cfg.zeno_schedule, beta)?;
                let Some(decreasing) = probe.strictly_decreasing else {
                    continue;
                };
                let recs = probe
                    .points
                    .iter()
                    .map(|p| ZenoRecord {
                        sample: i,
                        t: p.t,
                        lambda: p.lambda,
                        distance_to_mixed: p.distance_to_mixed,
                        mixed_residual: p.mixed_residual,
                    })
                    .collect();
                return Ok((redraws, decreasing, recs));
            }
            Err(Error::invalid(
                "could not draw a model with non-commuting H_s and S",
            ))
        })
        .collect::<Result<_>>()?;
    let strictly_decreasing: Vec<bool> = per_sample.iter().map(|p| p.1).collect();
    let hits = strictly_decreasing.iter().filter(|&&b| b).count();
    Ok(ZenoSummary {
        count: per_sample.len(),
        commuting_redraws: per_sample.iter().map(|p| p.0).sum(),
        decreasing_fraction: hits as f64 / per_sample.len() as f64,
        strictly_decreasing,
        records: per_sample.into_iter().flat_map(|p| p.2).collect(),
    })
}

// Algorithm II

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub sample: usize,
    pub dim: usize,
    pub beta: f64,
    pub m_bits: u32,
    /// `||pi - gibbs||_1` of the exact chain.
    pub exact_gibbs_l1: f64,
    pub kappa: f64,
    pub gap: f64,
    pub e_norm: f64,
    pub y_norm: f64,
    pub bound: f64,
    pub bound_valid: bool,
    pub actual: f64,
    pub bound_holds: bool,
}

impl CsvRow for ChainRecord {
    const HEADER: &'static [&'static str] = &[
        "sample",
        "dim",
        "beta",
        "m_bits",
        "exact_gibbs_l1",
        "kappa",
        "gap",
        "e_norm",
        "y_norm",
        "bound",
        "bound_valid",
        "actual",
        "bound_holds",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub count: usize,
    pub exact_gibbs_l1: Option<Aggregate>,
    pub actual: Option<Aggregate>,
    pub valid_bounds: usize,
    pub violations: usize,
    #[serde(skip)]
    pub records: Vec<ChainRecord>,
}

pub fn run_chain2_sweep(cfg: &ExperimentConfig) -> Result<ChainSummary> {
    cfg.validate()?;
    let per_sample: Vec<Vec<ChainRecord>> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, i as u64);
            let (h, _) = sample_nondegenerate_system(cfg.n, &mut rng)?;
            let energies = eigvalsh(&assemble(&h)?)?;
            let mut out = Vec::new();
            for &beta in &cfg.beta {
                let exact = exact_chain(&energies, beta)?;
                let pi = stationary_distribution(&exact)?;
                let exact_gibbs_l1 = pi
                    .iter()
                    .zip(gibbs_weights(&energies, beta))
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                for &m in &cfg.m_bits {
                    let kernel = phase_kernel_with_slack(&energies, m, cfg.slack)?;
                    let approx = approximate_chain_for(&energies, beta, &kernel)?;
                    let cp = chain_perturbation_bound(&exact, &approx)?;
                    out.push(ChainRecord {
                        sample: i,
                        dim: energies.len(),
                        beta,
                        m_bits: m,
                        exact_gibbs_l1,
                        kappa: cp.kappa,
                        gap: cp.gap,
                        e_norm: cp.e_norm,
                        y_norm: cp.y_norm,
                        bound: cp.bound,
                        bound_valid: cp.bound_valid,
                        actual: cp.actual,
                        bound_holds: !cp.bound_valid || cp.actual <= cp.bound,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let records: Vec<ChainRecord> = per_sample.into_iter().flatten().collect();
    let exact: Vec<f64> = records.iter().map(|r| r.exact_gibbs_l1).collect();
    let actual: Vec<f64> = records.iter().map(|r| r.actual).collect();
    Ok(ChainSummary {
        count: records.len(),
        exact_gibbs_l1: aggregate(&exact),
        actual: aggregate(&actual),
        valid_bounds: records.iter().filter(|r| r.bound_valid).count(),
        violations: records.iter().filter(|r| !r.bound_holds).count(),
        records,
    })
}

// correlations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub t: f64,
    pub re: f64,
    pub im: f64,
    pub prediction: f64,
    pub residual: f64,
}

impl CsvRow for CorrelationRow {
    const HEADER: &'static [&'static str] = &["t", "re", "im", "prediction", "residual"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub count: usize,
    pub beta: f64,
    pub lambda_kick: f64,
    pub max_residual: f64,
    /// Largest deviation from `2i sin(2t) tanh(beta)`; single-qubit sweeps only.
    pub closed_form_error: Option<f64>,
    #[serde(skip)]
    pub rows: Vec<CorrelationRow>,
}

fn embed_single(op: &ComplexMatrix, qubit: usize, n: usize) -> Result<HermitianOperator> {
    let left = ComplexMatrix::identity(1 << qubit, 1 << qubit);
    let right = ComplexMatrix::identity(1 << (n - qubit - 1), 1 << (n - qubit - 1));
    HermitianOperator::new(kron(&kron(&left, op), &right))
}

/// `Tr rho_beta [O1, O2(t)]` and the kick response along `t in [0, t_max]`.
///
/// One qubit uses `H = sigma_z`, `O1 = O2 = sigma_x`; more qubits draw `H_s`
/// from stream 0 and couple `sigma_x` on the first and last qubits.
pub fn run_correlation_sweep(cfg: &ExperimentConfig) -> Result<CorrelationSummary> {
    cfg.validate()?;
    let beta = cfg.first_beta();
    let (h, o1, o2) = if cfg.n == 1 {
        let x = pauli::op(pauli::x());
        (pauli::op(pauli::z()), x.clone(), x)
    } else {
        let (local, _) = sample_nondegenerate_system(cfg.n, &mut substream(cfg.seed, 0))?;
        (
            assemble(&local)?,
            embed_single(&pauli::x(), 0, cfg.n)?,
            embed_single(&pauli::x(), cfg.n - 1, cfg.n)?,
        )
    };
    let rho = gibbs_state(&h, beta)?;
    let last = (cfg.correlation_points - 1) as f64;
    let mut rows = Vec::with_capacity(cfg.correlation_points);
    let mut closed = 0.0f64;
    for i in 0..cfg.correlation_points {
        let t = cfg.t_max * i as f64 / last;
        let corr = correlation_2pt(&rho, &o1, &o2, &h, t)?;
        let lr = linear_response_experiment(&h, &rho, &o1, &o2, cfg.lambda_kick, t)?;
        if cfg.n == 1 {
            let exact = crate::matcore::c64(0.0, 2.0 * (2.0 * t).sin() * beta.tanh());
            closed = closed.max((corr - exact).norm());
        }
        rows.push(CorrelationRow {
            t,
            re: corr.re,
            im: corr.im,
            prediction: lr.prediction,
            residual: lr.residual,
        });
    }
    Ok(CorrelationSummary {
        count: rows.len(),
        beta,
        lambda_kick: cfg.lambda_kick,
        max_residual: rows.iter().map(|r| r.residual).fold(0.0, f64::max),
        closed_form_error: (cfg.n == 1).then_some(closed),
        rows,
    })
}

// dispatch

/// Runs the configured experiment and writes its files under `dir`.
pub fn run_and_emit(cfg: &ExperimentConfig, dir: &Path) -> Result<EmittedFiles> {
    match cfg.kind {
        ExperimentKind::DosHistogram => {
            let r = run_dos_histogram(cfg)?;
            emit_results(dir, cfg, &r.rows(), &r)
        }
        ExperimentKind::BathEnsemble => {
            let r = run_bath_ensemble(cfg)?;
            emit_results(dir, cfg, &r.records, &r)
        }
        ExperimentKind::BetaSweep => {
            let r = run_beta_sweep(cfg)?;
            emit_results(dir, cfg, &r.records(), &r)
        }
        ExperimentKind::ZenoProbe => {
            let r = run_zeno(cfg)?;
            emit_results(dir, cfg, &r.records, &r)
        }
        ExperimentKind::Chain2Sweep => {
            let r = run_chain2_sweep(cfg)?;
            emit_results(dir, cfg, &r.records, &r)
        }
        ExperimentKind::RandomDmDistance => {
            let r = run_random_dm_distance(cfg)?;
            emit_results(dir, cfg, &r.records, &r)
        }
        ExperimentKind::CorrelationSweep => {
            let r = run_correlation_sweep(cfg)?;
            emit_results(dir, cfg, &r.rows, &r)
        }
    }
}
