//! End-to-end fits: marginals, τ̂ surfaces, bridge targets, spline surfaces
//! with BIC-selected basis sizes, PD projection, latent prediction and FPCA.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bridge::PairKind;
use crate::covfit::{
    build_targets, select_cross, select_marginal, BicContext, FitDiagnostics, LatentCorrelationModel,
    LmOptions, SplineSurface, TableOptions, DEFAULT_EPSILON, DEFAULT_K_CANDIDATES,
};
use crate::data::{regular_grid, MixedDataset};
use crate::error::{Error, Result};
use crate::fpca::{
    mfpca_full, ps_decompose, ps_pool, retained_count, to_correlation, trapezoid_weights, weighted_eigen, EigenSystem,
    DEFAULT_VAR_THRESHOLD,
};
use crate::kendall::{tau_surface, DEFAULT_C0};
use crate::latent::{predict_all, GibbsOptions, LatentPrediction, SPLIT_CHAIN_THRESHOLD};
use crate::marginals::MarginalModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Blockwise fit of every marginal and cross surface, full MFPCA.
    M2fpca,
    /// Marginal surfaces only, shared eigenfunctions of the pooled block.
    PsM2fpca,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::M2fpca => "m2fpca",
            Method::PsM2fpca => "ps_m2fpca",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m2fpca" => Ok(Method::M2fpca),
            "ps_m2fpca" => Ok(Method::PsM2fpca),
            other => Err(Error::InvalidArgument(format!(
                "unknown method {other:?} (expected m2fpca or ps_m2fpca)"
            ))),
        }
    }
}

/// Seed of a named substream of a root seed.
pub fn substream(root: u64, name: &str) -> u64 {
    // FNV-1a over the name, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Effective parameters of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: Method,
    pub grid_size: usize,
    pub c0: u64,
    pub epsilon: f64,
    pub k_candidates: Vec<usize>,
    pub var_threshold: f64,
    pub seed: u64,
    pub tables: TableOptions,
    pub lm: LmOptions,
    /// Burn-in and draws of the sampler; its seed comes from `seed`.
    pub gibbs: GibbsOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: Method::M2fpca,
            grid_size: 16,
            c0: DEFAULT_C0,
            epsilon: DEFAULT_EPSILON,
            k_candidates: DEFAULT_K_CANDIDATES.to_vec(),
            var_threshold: DEFAULT_VAR_THRESHOLD,
            seed: 0,
            tables: TableOptions::default(),
            lm: LmOptions::default(),
            gibbs: GibbsOptions::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::InvalidArgument(format!("grid size must be at least 2, got {}", self.grid_size)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.k_candidates.is_empty() || self.k_candidates.iter().any(|&k| k < 3) {
            return Err(Error::InvalidArgument("basis size candidates must be non-empty and at least 3".into()));
        }
        if !(self.var_threshold > 0.0 && self.var_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "variance threshold must lie in (0, 1], got {}",
                self.var_threshold
            )));
        }
        Ok(())
    }

    /// Table options with the seed of the "fit" substream.
    pub fn table_options(&self) -> TableOptions {
        TableOptions { seed: substream(self.seed, "fit"), ..self.tables }
    }

    /// Sampler options with the seed of the "sampler" substream.
    pub fn sampler_options(&self) -> GibbsOptions {
        GibbsOptions { seed: substream(self.seed, "sampler"), ..self.gibbs }
    }
}

/// Basis size selection record of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub j: usize,
    pub k: usize,
    pub selected: usize,
    pub bic: Vec<(usize, Option<f64>)>,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub config: FitConfig,
    pub marginals: MarginalModel,
    pub model: LatentCorrelationModel,
    pub blocks: Vec<BlockReport>,
    pub latents: Vec<LatentPrediction>,
    pub eigen: EigenSystem,
}

impl FitResult {
    /// Estimated latent correlation on the grid: the projected model for
    /// the full method, the standardized ps reconstruction otherwise.
    pub fn estimated_correlation(&self) -> Result<DMatrix<f64>> {
        match self.config.method {
            Method::M2fpca => Ok(self.model.covariance.clone()),
            Method::PsM2fpca => Ok(to_correlation(&self.eigen.ps_covariance()?)),
        }
    }

    /// Number of subjects whose sampler halves disagreed by more than the
    /// split-chain threshold.
    pub fn mixing_warnings(&self) -> usize {
        self.latents
            .iter()
            .filter(|p| p.split_difference > SPLIT_CHAIN_THRESHOLD)
            .count()
    }
}

/// Runs the selected method on `data`.
pub fn fit(data: &MixedDataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let jn = data.n_components();
    let grid = regular_grid(config.grid_size)?;
    let marginals = MarginalModel::fit(data);
    let types = data.types();
    let tables = config.table_options();
    let gibbs = config.sampler_options();
    let ctx = BicContext {
        data,
        marginals: &marginals,
        grid: &grid,
        epsilon: config.epsilon,
        gibbs,
    };

    let targets = |j: usize, k: usize| {
        let tau = tau_surface(data, j, k, config.c0).map_err(|e| e.in_stage("kendall"))?;
        build_targets(&tau, PairKind::new(types[j], types[k]), &marginals, &tables)
            .map_err(|e| e.in_stage("bridge targets"))
    };

    let mut blocks = Vec::new();
    let mut marginal_surfaces: Vec<SplineSurface> = Vec::with_capacity(jn);
    for j in 0..jn {
        let sel = select_marginal(&targets(j, j)?, &config.k_candidates, &ctx, &config.lm)
            .map_err(|e| e.in_stage("marginal surface"))?;
        log::info!("block ({j}, {j}): K = {}", sel.surface.basis_size());
        blocks.push(report(&sel.surface, sel.bic));
        marginal_surfaces.push(sel.surface);
    }

    let mut surfaces = Vec::new();
    let block_diagonal = config.method == Method::PsM2fpca;
    for j in 0..jn {
        surfaces.push(marginal_surfaces[j].clone());
        if block_diagonal {
            continue;
        }
        for k in (j + 1)..jn {
            let sel = select_cross(
                &targets(j, k)?,
                &config.k_candidates,
                &marginal_surfaces[j],
                &marginal_surfaces[k],
                &ctx,
                &config.lm,
            )
            .map_err(|e| e.in_stage("cross surface"))?;
            log::info!("block ({j}, {k}): K = {}", sel.surface.basis_size());
            blocks.push(report(&sel.surface, sel.bic));
            surfaces.push(sel.surface);
        }
    }

    let model = LatentCorrelationModel::new(grid.clone(), jn, surfaces, config.epsilon, block_diagonal)
        .map_err(|e| e.in_stage("projection"))?;
    let components: Vec<usize> = (0..jn).collect();
    let latents = predict_all(data, &marginals, &grid, &components, &model.covariance, &gibbs)
        .map_err(|e| e.in_stage("latent prediction"))?;
    let poorly_mixed = latents.iter().filter(|p| p.split_difference > SPLIT_CHAIN_THRESHOLD).count();
    if poorly_mixed > 0 {
        log::warn!("{poorly_mixed} subjects exceed the split-chain threshold {SPLIT_CHAIN_THRESHOLD}");
    }

    let eigen = match config.method {
        Method::M2fpca => mfpca_full(&latents, config.var_threshold),
        Method::PsM2fpca => ps_eigen(&model, &latents, config.var_threshold),
    }
    .map_err(|e| e.in_stage("fpca"))?;

    Ok(FitResult {
        config: config.clone(),
        marginals,
        model,
        blocks,
        latents,
        eigen,
    })
}

fn report(surface: &SplineSurface, bic: Vec<(usize, Option<f64>)>) -> BlockReport {
    BlockReport {
        j: surface.j,
        k: surface.k,
        selected: surface.basis_size(),
        bic,
        diagnostics: surface.diagnostics.clone(),
    }
}

/// Shared eigenfunctions of the pooled marginal block, keeping the smallest
/// L that reaches the variance threshold of its spectrum.
fn ps_eigen(model: &LatentCorrelationModel, latents: &[LatentPrediction], threshold: f64) -> Result<EigenSystem> {
    let h = ps_pool(model)?;
    let (values, _) = weighted_eigen(&h, &trapezoid_weights(&model.grid)?);
    let l = retained_count(&values, threshold)?;
    ps_decompose(latents, &h, l)
}
