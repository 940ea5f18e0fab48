//! Simulation scenarios (stationary multivariate exponential and
//! nonstationary Fourier expansion), the mixed-type observation layer, the
//! ISE metric and the Monte Carlo benchmark harness.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{regular_grid, Component, MixedDataset, Observation, VariableType};
use crate::error::{Error, Result};
use crate::fpca::{mfpca_full, to_correlation, trapezoid_weights, EigenSystem};
use crate::latent::{LatentPrediction, PredictionMethod};
use crate::marginals::apply_observation_map;
use crate::pipeline::{fit, substream, FitConfig, Method};

/// Number of Fourier basis functions of the nonstationary scenario.
pub const FOURIER_SIZE: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Stationary,
    Nonstationary,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Stationary => "stationary",
            Scenario::Nonstationary => "nonstationary",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stationary" => Ok(Scenario::Stationary),
            "nonstationary" | "non-stationary" => Ok(Scenario::Nonstationary),
            other => Err(Error::InvalidArgument(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub scenario: Scenario,
    pub p: usize,
    pub n: usize,
    pub m: usize,
    pub types: Vec<VariableType>,
    pub cutoffs: Vec<Vec<f64>>,
    pub seed: u64,
    pub replications: usize,
}

impl SimulationConfig {
    /// Default design with `p` components; types and cutoffs cycle through
    /// binary (0.5), ordinal with four levels (−0.6, 0.1, 0.6), truncated
    /// (0.5) and continuous.
    pub fn new(scenario: Scenario, p: usize, n: usize) -> Self {
        let (types, cutoffs) = (0..p).map(default_type).unzip();
        Self {
            scenario,
            p,
            n,
            m: 16,
            types,
            cutoffs,
            seed: 0,
            replications: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 components, got {}", self.p)));
        }
        if self.n < 2 || self.m < 2 {
            return Err(Error::InvalidArgument("need n ≥ 2 subjects and m ≥ 2 grid points".into()));
        }
        if self.types.len() != self.p || self.cutoffs.len() != self.p {
            return Err(Error::DimensionMismatch("types and cutoffs must list every component".into()));
        }
        for (t, c) in self.types.iter().zip(&self.cutoffs) {
            if c.len() != t.n_cutoffs() || c.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidArgument(format!("cutoffs {c:?} do not fit type {t}")));
            }
        }
        Ok(())
    }
}

fn default_type(j: usize) -> (VariableType, Vec<f64>) {
    match j % 4 {
        0 => (VariableType::Binary, vec![0.5]),
        1 => (VariableType::Ordinal { levels: 4 }, vec![-0.6, 0.1, 0.6]),
        2 => (VariableType::Truncated, vec![0.5]),
        _ => (VariableType::Continuous, Vec::new()),
    }
}

// =============================================================================
// Stationary scenario
// =============================================================================

/// Exponential-kernel (smoothness 1/2) multivariate Matérn parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub marginal_scales: Vec<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub scales: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub sills: DMatrix<f64>,
    pub base_correlation: f64,
}

impl MaternParams {
    /// Derived cross scales and sills for given marginal scales and an
    /// exchangeable base correlation.
    pub fn from_scales(marginal_scales: Vec<f64>, base_correlation: f64) -> Self {
        let p = marginal_scales.len();
        let phi = &marginal_scales;
        let scales = DMatrix::from_fn(p, p, |i, j| ((phi[i] * phi[i] + phi[j] * phi[j]) / 2.0).sqrt());
        let sills = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else {
                base_correlation * (phi[i] * phi[j]).sqrt() / scales[(i, j)]
            }
        });
        Self {
            marginal_scales,
            scales,
            sills,
            base_correlation,
        }
    }
}

/// Marginal scales as a seeded permutation of `p` equidistant values on
/// [1, 5], with base correlation 0.5.
pub fn stationary_params(p: usize, rng: &mut impl Rng) -> Result<MaternParams> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 components, got {p}")));
    }
    let mut scales: Vec<f64> = (0..p).map(|i| 1.0 + 4.0 * i as f64 / (p - 1) as f64).collect();
    scales.shuffle(rng);
    Ok(MaternParams::from_scales(scales, 0.5))
}

pub fn stationary_cov(s: f64, t: f64, i: usize, j: usize, params: &MaternParams) -> f64 {
    params.sills[(i, j)] * (-params.scales[(i, j)] * (s - t).abs()).exp()
}

/// Stationary covariance on the grid, stacked by component, checked PD.
pub fn stationary_grid_cov(grid: &[f64], params: &MaternParams) -> Result<DMatrix<f64>> {
    let p = params.marginal_scales.len();
    let m = grid.len();
    let cov = DMatrix::from_fn(p * m, p * m, |r, c| stationary_cov(grid[r % m], grid[c % m], r / m, c / m, params));
    let min = SymmetricEigen::new(cov.clone()).eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    Ok(cov)
}

// =============================================================================
// Nonstationary scenario
// =============================================================================

/// Fourier system on [0, 1]: the constant, then √2 sin 2πkt, √2 cos 2πkt.
pub fn fourier_basis(l: usize, t: f64) -> f64 {
    if l == 0 {
        return 1.0;
    }
    let k = l.div_ceil(2) as f64;
    let arg = 2.0 * std::f64::consts::PI * k * t;
    if l % 2 == 1 {
        2f64.sqrt() * arg.sin()
    } else {
        2f64.sqrt() * arg.cos()
    }
}

/// Variance weight a_l = 3 l^(−1.8) for 1-based l.
pub fn fourier_weight(l: usize) -> f64 {
    3.0 * (l as f64).powf(-1.8)
}

/// Dense PD precision: off-diagonals uniform on [−0.5, 0.5], unit diagonal,
/// ridged when not positive definite, redrawn when badly conditioned.
pub fn random_precision(p: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    loop {
        let mut omega = DMatrix::identity(p, p);
        for i in 0..p {
            for j in (i + 1)..p {
                let v: f64 = rng.random_range(-0.5..=0.5);
                omega[(i, j)] = v;
                omega[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(omega.clone()).eigenvalues;
        let min = eig.min();
        if min <= 0.0 {
            omega += DMatrix::identity(p, p) * (min.abs() + 0.05);
        }
        let eig = SymmetricEigen::new(omega.clone()).eigenvalues;
        if eig.min() > 0.0 && eig.max() / eig.min() < 1e8 {
            return omega;
        }
    }
}

/// Grid covariance Σ_l a_l (Ω_l⁻¹)_jk φ_l(s) φ_l(t) from given inverse
/// precisions (one per basis function).
pub fn nonstationary_from_covariances(grid: &[f64], sigmas: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let m = grid.len();
    let p = sigmas
        .first()
        .ok_or_else(|| Error::InvalidArgument("no basis covariances".into()))?
        .nrows();
    let mut cov = DMatrix::zeros(p * m, p * m);
    for (l, sigma) in sigmas.iter().enumerate() {
        let a = fourier_weight(l + 1);
        let phi: Vec<f64> = grid.iter().map(|&t| fourier_basis(l, t)).collect();
        for j in 0..p {
            for k in 0..p {
                let c = a * sigma[(j, k)];
                for s in 0..m {
                    for t in 0..m {
                        cov[(j * m + s, k * m + t)] += c * phi[s] * phi[t];
                    }
                }
            }
        }
    }
    Ok(cov)
}

/// Nonstationary grid covariance with seeded random precisions.
pub fn nonstationary_grid_cov(grid: &[f64], p: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 components, got {p}")));
    }
    let sigmas: Vec<DMatrix<f64>> = (0..FOURIER_SIZE)
        .map(|_| {
            random_precision(p, rng)
                .try_inverse()
                .expect("conditioned precision is invertible")
        })
        .collect();
    nonstationary_from_covariances(grid, &sigmas)
}

// =============================================================================
// Simulation
// =============================================================================

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulated {
    pub grid: Vec<f64>,
    /// Latent correlation on the grid, stacked by component.
    #[serde(with = "crate::serde_matrix")]
    pub truth: DMatrix<f64>,
    /// Stationary parameters drawn for this replication.
    pub params: Option<MaternParams>,
    #[serde(skip)]
    pub data: Option<MixedDataset>,
}

/// Draws one dataset. The latent process is standardized to unit variance
/// and the marginal transforms are the identity.
pub fn simulate(config: &SimulationConfig, seed: u64) -> Result<Simulated> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = regular_grid(config.m)?;
    let (cov, params) = match config.scenario {
        Scenario::Stationary => {
            let params = stationary_params(config.p, &mut rng)?;
            (stationary_grid_cov(&grid, &params)?, Some(params))
        }
        Scenario::Nonstationary => (nonstationary_grid_cov(&grid, config.p, &mut rng)?, None),
    };
    let truth = to_correlation(&cov);
    let chol = cholesky_jittered(&truth)?;
    let (m, p) = (config.m, config.p);
    let mut observations = Vec::with_capacity(config.n * p * m);
    for i in 0..config.n {
        let z = DVector::from_fn(p * m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = &chol * z;
        for j in 0..p {
            for (ti, &t) in grid.iter().enumerate() {
                observations.push(Observation {
                    subject: i,
                    component: j,
                    time: t,
                    value: apply_observation_map(v[j * m + ti], config.types[j], &config.cutoffs[j]),
                });
            }
        }
    }
    let subjects = (0..config.n).map(|i| format!("s{:04}", i + 1)).collect();
    let components = config
        .types
        .iter()
        .enumerate()
        .map(|(j, &vtype)| Component {
            name: format!("x{}_{}", j + 1, vtype.name()),
            vtype,
        })
        .collect();
    let data = MixedDataset::new(subjects, components, observations)?;
    Ok(Simulated {
        grid,
        truth,
        params,
        data: Some(data),
    })
}

fn cholesky_jittered(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut jitter = 0.0;
    for _ in 0..8 {
        let m = mat + DMatrix::identity(mat.nrows(), mat.ncols()) * jitter;
        if let Some(c) = Cholesky::new(m) {
            return Ok(c.l());
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
    }
    Err(Error::Singular("simulation covariance".into()))
}

// =============================================================================
// ISE
// =============================================================================

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IseReport {
    /// ISE of each (j, k) block.
    #[serde(with = "crate::serde_matrix")]
    pub per_block: DMatrix<f64>,
    /// Mean over blocks.
    pub total: f64,
}

/// Trapezoid approximation of ∫∫ (C_T − Ĉ)² per block, and its block mean.
pub fn ise(truth: &DMatrix<f64>, estimate: &DMatrix<f64>, grid: &[f64]) -> Result<IseReport> {
    let m = grid.len();
    if truth.shape() != estimate.shape() || truth.nrows() != truth.ncols() || truth.nrows() % m != 0 {
        return Err(Error::DimensionMismatch(format!(
            "ISE inputs {:?} and {:?} on a grid of {m}",
            truth.shape(),
            estimate.shape()
        )));
    }
    let w = trapezoid_weights(grid)?;
    let p = truth.nrows() / m;
    let per_block = DMatrix::from_fn(p, p, |a, b| {
        let mut acc = 0.0;
        for s in 0..m {
            for t in 0..m {
                let d = truth[(a * m + s, b * m + t)] - estimate[(a * m + s, b * m + t)];
                acc += w[s] * w[t] * d * d;
            }
        }
        acc
    });
    let total = per_block.mean();
    Ok(IseReport { per_block, total })
}

// =============================================================================
// Naive comparator
// =============================================================================

/// Gaussian MFPCA applied directly to the observed values: empirical
/// covariance of the gridded observations, truncated to the leading
/// eigenpairs explaining `var_threshold` of the variance. Discrete values
/// are used as reals and the result stays on the observed scale.
pub fn naive_mfpca(data: &MixedDataset, grid: &[f64], var_threshold: f64) -> Result<(EigenSystem, DMatrix<f64>)> {
    let m = grid.len();
    let jn = data.n_components();
    let mut latents = Vec::with_capacity(data.n_subjects());
    for i in 0..data.n_subjects() {
        let mut values = DMatrix::from_element(jn, m, f64::NAN);
        for (o, _) in data.subject_observations(i) {
            if let Some(ti) = grid.iter().position(|&g| (g - o.time).abs() < 1e-12) {
                values[(o.component, ti)] = o.value;
            }
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Validation(format!(
                "naive comparator needs every component on every grid point (subject {i})"
            )));
        }
        latents.push(LatentPrediction {
            subject: i,
            grid: grid.to_vec(),
            components: (0..jn).collect(),
            values,
            method: PredictionMethod::Deterministic,
            sampler: None,
            split_difference: 0.0,
        });
    }
    let system = mfpca_full(&latents, var_threshold)?;
    let d = jn * m;
    let mut cov = DMatrix::zeros(d, d);
    for l in 0..system.retained {
        let phi = system.eigenfunctions.column(l);
        cov += phi * phi.transpose() * system.eigenvalues[l];
    }
    Ok((system, cov))
}

// =============================================================================
// Benchmark
// =============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    M2fpca,
    PsM2fpca,
    NaiveMfpca,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 3] = [BenchMethod::M2fpca, BenchMethod::PsM2fpca, BenchMethod::NaiveMfpca];
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchMethod::M2fpca => "m2fpca",
            BenchMethod::PsM2fpca => "ps_m2fpca",
            BenchMethod::NaiveMfpca => "naive_mfpca",
        })
    }
}

impl FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m2fpca" => Ok(BenchMethod::M2fpca),
            "ps_m2fpca" => Ok(BenchMethod::PsM2fpca),
            "naive_mfpca" | "naive" => Ok(BenchMethod::NaiveMfpca),
            other => Err(Error::InvalidArgument(format!("unknown benchmark method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub seed: u64,
    pub method: BenchMethod,
    pub ise: Option<f64>,
    pub per_block: Option<Vec<Vec<f64>>>,
    pub error: Option<String>,
    /// Marginal scales drawn for the stationary scenario.
    pub marginal_scales: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub scenario: Scenario,
    pub n: usize,
    pub method: BenchMethod,
    pub mean_ise: f64,
    pub sd_ise: f64,
    pub n_fail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: SimulationConfig,
    pub fit: FitConfig,
    pub rows: Vec<BenchmarkRow>,
    pub replications: Vec<ReplicationResult>,
}

impl BenchmarkReport {
    pub fn row(&self, method: BenchMethod) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Columns scenario, n, method, mean_ise, sd_ise, n_fail.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["scenario", "n", "method", "mean_ise", "sd_ise", "n_fail"])?;
        for r in &self.rows {
            w.write_record([
                r.scenario.to_string(),
                r.n.to_string(),
                r.method.to_string(),
                r.mean_ise.to_string(),
                r.sd_ise.to_string(),
                r.n_fail.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Seed of replication `r`.
pub fn replication_seed(root: u64, r: usize) -> u64 {
    substream(substream(root, "sim"), &format!("replication-{r}"))
}

/// Runs `config.replications` Monte Carlo replications of every method.
/// A failing method is recorded as a failed replication and left out of
/// the summary.
pub fn benchmark(config: &SimulationConfig, methods: &[BenchMethod], fit_config: &FitConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    fit_config.validate()?;
    if config.replications == 0 {
        return Err(Error::InvalidArgument("need at least one replication".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no benchmark methods".into()));
    }
    let per_rep: Vec<Vec<ReplicationResult>> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(config, methods, fit_config, r))
        .collect::<Result<_>>()?;
    let replications: Vec<ReplicationResult> = per_rep.into_iter().flatten().collect();

    let rows = methods
        .iter()
        .map(|&method| {
            let values: Vec<f64> = replications
                .iter()
                .filter(|r| r.method == method)
                .filter_map(|r| r.ise)
                .collect();
            let n_fail = replications
                .iter()
                .filter(|r| r.method == method && r.ise.is_none())
                .count();
            let (mean_ise, sd_ise) = mean_sd(&values);
            BenchmarkRow {
                scenario: config.scenario,
                n: config.n,
                method,
                mean_ise,
                sd_ise,
                n_fail,
            }
        })
        .collect();
    Ok(BenchmarkReport {
        config: config.clone(),
        fit: fit_config.clone(),
        rows,
        replications,
    })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn run_replication(
    config: &SimulationConfig,
    methods: &[BenchMethod],
    fit_config: &FitConfig,
    r: usize,
) -> Result<Vec<ReplicationResult>> {
    let seed = replication_seed(config.seed, r);
    let sim = simulate(config, seed)?;
    let data = sim.data.as_ref().expect("simulate returns data");
    let scales = sim.params.as_ref().map(|p| p.marginal_scales.clone());
    Ok(methods
        .iter()
        .map(|&method| {
            let estimate = match method {
                BenchMethod::M2fpca | BenchMethod::PsM2fpca => {
                    let cfg = FitConfig {
                        method: if method == BenchMethod::M2fpca { Method::M2fpca } else { Method::PsM2fpca },
                        grid_size: config.m,
                        seed,
                        ..fit_config.clone()
                    };
                    fit(data, &cfg).and_then(|f| f.estimated_correlation())
                }
                BenchMethod::NaiveMfpca => {
                    naive_mfpca(data, &sim.grid, fit_config.var_threshold).map(|(_, c)| c)
                }
            };
            let scored = estimate.and_then(|c| ise(&sim.truth, &c, &sim.grid));
            if let Err(e) = &scored {
                log::warn!("replication {r}, {method}: {e}");
            }
            ReplicationResult {
                replication: r,
                seed,
                method,
                ise: scored.as_ref().ok().map(|s| s.total),
                per_block: scored
                    .as_ref()
                    .ok()
                    .map(|s| (0..s.per_block.nrows()).map(|a| s.per_block.row(a).iter().copied().collect()).collect()),
                error: scored.err().map(|e| e.to_string()),
                marginal_scales: scales.clone(),
            }
        })
        .collect())
}
