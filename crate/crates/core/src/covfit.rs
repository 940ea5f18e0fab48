//! Tensor-product B-spline latent correlation surfaces: weighted nonlinear
//! least squares against bridged Kendall surfaces, BIC choice of the basis
//! size, block assembly and eigenvalue-clipping PD projection.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{Bridge, BridgeTable, PairKind};
use crate::data::MixedDataset;
use crate::error::{Error, Result};
use crate::kendall::TauSurface;
use crate::latent::{predict_all, GibbsOptions};
use crate::marginals::MarginalModel;
use crate::mvn::MvnIntegrator;

/// Default eigenvalue floor of the PD projection.
pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Default basis sizes tried by the BIC.
pub const DEFAULT_K_CANDIDATES: [usize; 7] = [4, 5, 6, 7, 8, 9, 10];

// =============================================================================
// Link
// =============================================================================

/// g(x) = (eˣ − 1)/(eˣ + 1), evaluated as tanh(x/2) for stability.
pub fn link_g(x: f64) -> f64 {
    (0.5 * x).tanh()
}

pub fn link_g_inv(y: f64) -> Result<f64> {
    if !(y.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "inverse link needs |y| < 1, got {y}"
        )));
    }
    Ok(((1.0 + y) / (1.0 - y)).ln())
}

// =============================================================================
// B-splines
// =============================================================================

/// Clamped B-spline basis of size K on [0, 1] with equally spaced interior
/// knots; cubic when K ≥ 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    size: usize,
    degree: usize,
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidArgument(format!(
                "basis size must be at least 2, got {size}"
            )));
        }
        let degree = 3.min(size - 1);
        let n_interior = size - degree - 1;
        let mut knots = vec![0.0; degree + 1];
        for i in 1..=n_interior {
            knots.push(i as f64 / (n_interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self {
            size,
            degree,
            knots,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// All basis functions at `t` (clamped to [0, 1]).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let t = t.clamp(0.0, 1.0);
        let p = self.degree;
        let k = &self.knots;
        // knot span containing t; the right endpoint belongs to the last span
        let span = if t >= 1.0 {
            self.size - 1
        } else {
            (p..self.size).rfind(|&i| k[i] <= t).unwrap_or(p)
        };
        let mut n = vec![0.0; p + 1];
        n[0] = 1.0;
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        for j in 1..=p {
            left[j] = t - k[span + 1 - j];
            right[j] = k[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let mut out = vec![0.0; self.size];
        for (r, v) in n.into_iter().enumerate() {
            out[span - p + r] = v;
        }
        out
    }

    /// Basis matrix with one row per time.
    pub fn matrix(&self, times: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(times.len(), self.size);
        for (i, &t) in times.iter().enumerate() {
            for (a, v) in self.eval(t).into_iter().enumerate() {
                m[(i, a)] = v;
            }
        }
        m
    }
}

// =============================================================================
// Surfaces
// =============================================================================

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub n_cells: usize,
}

/// C(s, t) = g(b(s)ᵀ U b(t)) for one component pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSurface {
    pub j: usize,
    pub k: usize,
    pub basis: BSplineBasis,
    #[serde(with = "crate::serde_matrix")]
    pub u: DMatrix<f64>,
    pub diagnostics: FitDiagnostics,
}

impl SplineSurface {
    pub fn constant(j: usize, k: usize, size: usize, value: f64) -> Result<Self> {
        let basis = BSplineBasis::new(size)?;
        // the basis is a partition of unity, so a constant U gives a constant η
        let u = DMatrix::from_element(size, size, link_g_inv(value)?);
        Ok(Self {
            j,
            k,
            basis,
            u,
            diagnostics: FitDiagnostics {
                iterations: 0,
                objective: 0.0,
                gradient_norm: 0.0,
                converged: true,
                n_cells: 0,
            },
        })
    }

    pub fn basis_size(&self) -> usize {
        self.basis.size()
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        let bs = DVector::from_vec(self.basis.eval(s));
        let bt = DVector::from_vec(self.basis.eval(t));
        link_g(bs.dot(&(&self.u * bt)))
    }

    /// Surface on `rows × cols` without any symmetrization.
    pub fn eval_grid(&self, rows: &[f64], cols: &[f64]) -> DMatrix<f64> {
        let bs = self.basis.matrix(rows);
        let bt = self.basis.matrix(cols);
        (bs * &self.u * bt.transpose()).map(link_g)
    }
}

/// m × m block of a surface on `grid`; marginal blocks are symmetrized and get
/// a unit diagonal.
pub fn evaluate_block(surface: &SplineSurface, grid: &[f64]) -> DMatrix<f64> {
    let mut b = surface.eval_grid(grid, grid);
    if surface.j == surface.k {
        b = (&b + b.transpose()) * 0.5;
        b.fill_diagonal(1.0);
    }
    b
}

// =============================================================================
// Fitting targets
// =============================================================================

/// Bridge table settings used when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    pub nodes: usize,
    pub points: usize,
    pub shifts: usize,
    pub seed: u64,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            nodes: 20,
            points: 1021,
            shifts: 2,
            seed: 0x7461_626c_65,
        }
    }
}

/// One cell entering the weighted least squares.
#[derive(Debug, Clone)]
pub struct CellTarget {
    pub s: f64,
    pub t: f64,
    pub tau: f64,
    pub weight: f64,
    pub table: Arc<BridgeTable>,
}

/// All retained cells of one block with their bridge tables.
#[derive(Debug, Clone)]
pub struct BlockTargets {
    pub j: usize,
    pub k: usize,
    pub cells: Vec<CellTarget>,
}

/// Pairs the τ̂ cells of a surface with bridge tables built from the
/// marginal cutoffs at the two times. Cells touching a degenerate or
/// unestimated margin, and the diagonal s = t of marginal blocks, are left
/// out. Weights are N / ΣN over the retained cells.
pub fn build_targets(
    tau: &TauSurface,
    kind: PairKind,
    marginals: &MarginalModel,
    options: &TableOptions,
) -> Result<BlockTargets> {
    let (j, k) = (tau.j, tau.k);
    let retained: Vec<_> = tau
        .cells
        .iter()
        .filter(|c| !(j == k && c.s == c.t))
        .filter(|c| marginals.is_usable(j, c.s) && marginals.is_usable(k, c.t))
        .collect();
    if retained.is_empty() {
        return Err(Error::InsufficientData { j, k });
    }

    let bridge = Bridge::new(MvnIntegrator::new(options.points, options.shifts, options.seed));
    let key = |s: usize, t: usize| -> Vec<u64> {
        let cj = marginals.cutoffs(j, s).unwrap_or(&[]);
        let ck = marginals.cutoffs(k, t).unwrap_or(&[]);
        cj.iter()
            .map(|v| v.to_bits())
            .chain(std::iter::once(u64::MAX))
            .chain(ck.iter().map(|v| v.to_bits()))
            .collect()
    };
    let mut unique: Vec<(Vec<u64>, usize, usize)> = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for c in &retained {
        let kk = key(c.s, c.t);
        if !seen.contains_key(&kk) {
            seen.insert(kk.clone(), unique.len());
            unique.push((kk, c.s, c.t));
        }
    }
    let tables: Vec<Arc<BridgeTable>> = unique
        .par_iter()
        .map(|(_, s, t)| {
            let cj = marginals.cutoffs(j, *s).unwrap_or(&[]);
            let ck = marginals.cutoffs(k, *t).unwrap_or(&[]);
            BridgeTable::build(&bridge, kind, cj, ck, options.nodes).map(Arc::new)
        })
        .collect::<Result<_>>()?;

    let total: f64 = retained.iter().map(|c| c.n_pairs as f64).sum();
    let cells = retained
        .iter()
        .map(|c| CellTarget {
            s: tau.times[c.s],
            t: tau.times[c.t],
            tau: c.tau,
            weight: c.n_pairs as f64 / total,
            table: Arc::clone(&tables[seen[&key(c.s, c.t)]]),
        })
        .collect();
    Ok(BlockTargets { j, k, cells })
}

// =============================================================================
// Weighted nonlinear least squares
// =============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
        }
    }
}

/// Coefficient layout: the full K × K matrix for cross blocks, the upper
/// triangle for marginal ones.
fn parameter_pairs(size: usize, symmetric: bool) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for a in 0..size {
        for b in 0..size {
            if !symmetric || a <= b {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

fn design_matrix(targets: &BlockTargets, basis: &BSplineBasis, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let symmetric = targets.j == targets.k;
    let mut x = DMatrix::zeros(targets.cells.len(), pairs.len());
    for (row, c) in targets.cells.iter().enumerate() {
        let bs = basis.eval(c.s);
        let bt = basis.eval(c.t);
        for (p, &(a, b)) in pairs.iter().enumerate() {
            x[(row, p)] = if symmetric && a != b {
                bs[a] * bt[b] + bs[b] * bt[a]
            } else {
                bs[a] * bt[b]
            };
        }
    }
    x
}

/// Residuals √w(τ̂ − F(g(η))) and their derivatives with respect to η.
fn residuals(targets: &BlockTargets, eta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = targets.cells.len();
    let mut r = DVector::zeros(n);
    let mut dr = DVector::zeros(n);
    for (i, c) in targets.cells.iter().enumerate() {
        let rho = link_g(eta[i]);
        let (f, df_dtheta) = c.table.eval_theta(rho.asin());
        // dθ/dη = (1/√(1−ρ²))·(1−ρ²)/2
        let dtheta_deta = 0.5 * (1.0 - rho * rho).max(0.0).sqrt();
        let sw = c.weight.sqrt();
        r[i] = sw * (c.tau - f);
        dr[i] = -sw * df_dtheta * dtheta_deta;
    }
    (r, dr)
}

/// Levenberg–Marquardt from U = 0 for a fixed basis size.
pub fn fit_targets(targets: &BlockTargets, size: usize, options: &LmOptions) -> Result<SplineSurface> {
    let basis = BSplineBasis::new(size)?;
    let symmetric = targets.j == targets.k;
    let pairs = parameter_pairs(size, symmetric);
    let x = design_matrix(targets, &basis, &pairs);
    let n_par = pairs.len();

    let mut u = DVector::zeros(n_par);
    let mut eta = &x * &u;
    let (mut r, mut dr) = residuals(targets, &eta);
    let mut f = r.norm_squared();
    let mut lambda = 1e-3;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    'outer: while iterations < options.max_iterations {
        let mut jac = x.clone();
        for (i, mut row) in jac.row_iter_mut().enumerate() {
            row *= dr[i];
        }
        let jtr = jac.transpose() * &r;
        grad_norm = 2.0 * jtr.norm();
        if grad_norm <= options.gradient_tolerance {
            converged = true;
            break;
        }
        let jtj = jac.transpose() * &jac;
        let max_diag = jtj.diagonal().max().max(1e-300);
        loop {
            let mut a = jtj.clone();
            for p in 0..n_par {
                a[(p, p)] += lambda * jtj[(p, p)].max(1e-6 * max_diag);
            }
            let step = match Cholesky::new(a) {
                Some(ch) => -ch.solve(&jtr),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let u_new = &u + &step;
            let eta_new = &x * &u_new;
            let (r_new, dr_new) = residuals(targets, &eta_new);
            let f_new = r_new.norm_squared();
            if f_new <= f {
                let stalled = f - f_new <= 1e-15 * f.max(1e-300) && step.norm() <= 1e-12 * (1.0 + u.norm());
                u = u_new;
                eta = eta_new;
                r = r_new;
                dr = dr_new;
                f = f_new;
                lambda = (lambda / 3.0).max(1e-12);
                iterations += 1;
                if stalled {
                    break 'outer;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break 'outer;
            }
        }
    }
    let _ = eta;

    let mut umat = DMatrix::zeros(size, size);
    for (p, &(a, b)) in pairs.iter().enumerate() {
        umat[(a, b)] = u[p];
        if symmetric {
            umat[(b, a)] = u[p];
        }
    }
    let surface = SplineSurface {
        j: targets.j,
        k: targets.k,
        basis,
        u: umat,
        diagnostics: FitDiagnostics {
            iterations,
            objective: f,
            gradient_norm: grad_norm,
            converged,
            n_cells: targets.cells.len(),
        },
    };
    if converged {
        Ok(surface)
    } else {
        Err(Error::NonConvergence {
            iterations,
            objective: f,
            gradient_norm: grad_norm,
            best: surface.u.iter().copied().collect(),
        })
    }
}

/// Fits one block, accepting the best iterate (with a warning) when the
/// gradient tolerance was not reached.
pub fn fit_targets_lenient(targets: &BlockTargets, size: usize, options: &LmOptions) -> Result<SplineSurface> {
    match fit_targets(targets, size, options) {
        Ok(s) => Ok(s),
        Err(Error::NonConvergence {
            iterations,
            objective,
            gradient_norm,
            best,
        }) => {
            log::warn!(
                "block ({}, {}) K={size}: stopped after {iterations} iterations, objective {objective:.3e}, gradient norm {gradient_norm:.3e}",
                targets.j,
                targets.k
            );
            let basis = BSplineBasis::new(size)?;
            Ok(SplineSurface {
                j: targets.j,
                k: targets.k,
                basis,
                u: DMatrix::from_column_slice(size, size, &best),
                diagnostics: FitDiagnostics {
                    iterations,
                    objective,
                    gradient_norm,
                    converged: false,
                    n_cells: targets.cells.len(),
                },
            })
        }
        Err(e) => Err(e),
    }
}

/// Surface fit of one τ̂ surface at basis size `size`.
pub fn fit_surface(
    tau: &TauSurface,
    kind: PairKind,
    marginals: &MarginalModel,
    size: usize,
    table: &TableOptions,
    lm: &LmOptions,
) -> Result<SplineSurface> {
    if size < 3 {
        return Err(Error::InvalidArgument(format!(
            "basis size must be at least 3, got {size}"
        )));
    }
    let targets = build_targets(tau, kind, marginals, table)?;
    fit_targets(&targets, size, lm)
}

// =============================================================================
// BIC
// =============================================================================

/// BIC penalty {P} log n, with P = K(K+1)/2 for marginal and K² for cross blocks.
pub fn bic_penalty(size: usize, n: usize, marginal: bool) -> f64 {
    let p = if marginal { size * (size + 1) / 2 } else { size * size };
    p as f64 * (n as f64).ln()
}

/// n log|C| + Σ V̂ᵢᵀ C⁻¹ V̂ᵢ for a PD matrix C.
pub fn neg2_loglik(cov: &DMatrix<f64>, predictions: &[DVector<f64>]) -> Result<f64> {
    let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
        Error::Singular("covariance is not positive definite".into())
    })?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad: f64 = predictions
        .iter()
        .map(|v| v.dot(&chol.solve(v)))
        .sum();
    Ok(predictions.len() as f64 * logdet + quad)
}

/// Per-candidate BIC values and the selected surface.
#[derive(Debug, Clone)]
pub struct Selection {
    pub surface: SplineSurface,
    pub bic: Vec<(usize, Option<f64>)>,
}

/// Context shared by all BIC evaluations of one fit.
pub struct BicContext<'a> {
    pub data: &'a MixedDataset,
    pub marginals: &'a MarginalModel,
    pub grid: &'a [f64],
    pub epsilon: f64,
    pub gibbs: GibbsOptions,
}

impl BicContext<'_> {
    fn score(&self, components: &[usize], cov: &DMatrix<f64>) -> Result<f64> {
        let predictions = predict_all(
            self.data,
            self.marginals,
            self.grid,
            components,
            cov,
            &self.gibbs,
        )?;
        let vs: Vec<DVector<f64>> = predictions.into_iter().map(|p| p.stacked()).collect();
        neg2_loglik(cov, &vs)
    }
}

/// Chooses the basis size of a marginal block by BIC over `candidates`.
/// Ties go to the smaller K.
pub fn select_marginal(
    targets: &BlockTargets,
    candidates: &[usize],
    ctx: &BicContext<'_>,
    lm: &LmOptions,
) -> Result<Selection> {
    let j = targets.j;
    select_by_bic(targets, candidates, lm, true, ctx.data.n_subjects(), |surface| {
        let block = project_pd(&evaluate_block(surface, ctx.grid), ctx.epsilon)?;
        ctx.score(&[j], &block)
    })
}

/// Chooses the basis size of a cross block using the 2m × 2m joint
/// covariance with the already selected marginal surfaces.
pub fn select_cross(
    targets: &BlockTargets,
    candidates: &[usize],
    marginal_j: &SplineSurface,
    marginal_k: &SplineSurface,
    ctx: &BicContext<'_>,
    lm: &LmOptions,
) -> Result<Selection> {
    let (j, k) = (targets.j, targets.k);
    let bj = evaluate_block(marginal_j, ctx.grid);
    let bk = evaluate_block(marginal_k, ctx.grid);
    select_by_bic(targets, candidates, lm, false, ctx.data.n_subjects(), |surface| {
        let cross = evaluate_block(surface, ctx.grid);
        let joint = assemble(&[vec![bj.clone(), cross.clone()], vec![cross.transpose(), bk.clone()]])?;
        ctx.score(&[j, k], &project_pd(&joint, ctx.epsilon)?)
    })
}

fn select_by_bic(
    targets: &BlockTargets,
    candidates: &[usize],
    lm: &LmOptions,
    marginal: bool,
    n: usize,
    neg2ll: impl Fn(&SplineSurface) -> Result<f64>,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no basis size candidates".into()));
    }
    let mut best: Option<(f64, SplineSurface)> = None;
    let mut table = Vec::with_capacity(candidates.len());
    for &size in candidates {
        let scored = fit_targets_lenient(targets, size, lm)
            .and_then(|s| neg2ll(&s).map(|v| (v + bic_penalty(size, n, marginal), s)));
        match scored {
            Ok((bic, surface)) => {
                table.push((size, Some(bic)));
                if best.as_ref().is_none_or(|(b, _)| bic < *b) {
                    best = Some((bic, surface));
                }
            }
            Err(e) => {
                log::warn!(
                    "block ({}, {}): candidate K={size} skipped: {e}",
                    targets.j,
                    targets.k
                );
                table.push((size, None));
            }
        }
    }
    match best {
        Some((_, surface)) => Ok(Selection { surface, bic: table }),
        None => Err(Error::Singular(format!(
            "every basis size candidate failed for block ({}, {})",
            targets.j, targets.k
        ))),
    }
}

// =============================================================================
// Assembly and PD projection
// =============================================================================

/// Stacks a J × J array of equally sized square blocks.
pub fn assemble(blocks: &[Vec<DMatrix<f64>>]) -> Result<DMatrix<f64>> {
    let jn = blocks.len();
    if jn == 0 || blocks.iter().any(|row| row.len() != jn) {
        return Err(Error::DimensionMismatch("blocks must form a square J x J array".into()));
    }
    let m = blocks[0][0].nrows();
    let mut out = DMatrix::zeros(jn * m, jn * m);
    for (a, row) in blocks.iter().enumerate() {
        for (b, blk) in row.iter().enumerate() {
            if blk.nrows() != m || blk.ncols() != m {
                return Err(Error::DimensionMismatch(format!(
                    "block ({a}, {b}) is {}x{}, expected {m}x{m}",
                    blk.nrows(),
                    blk.ncols()
                )));
            }
            out.view_mut((a * m, b * m), (m, m)).copy_from(blk);
        }
    }
    Ok(out)
}

/// P max(Λ, ε) Pᵀ of the symmetrized input.
pub fn project_pd(mat: &DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    if mat.nrows() != mat.ncols() {
        return Err(Error::DimensionMismatch("matrix is not square".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.min() >= epsilon {
        return Ok(sym);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(epsilon));
    let p = &eig.eigenvectors;
    let out = p * DMatrix::from_diagonal(&clipped) * p.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Assembles blocks, then symmetrizes and clips eigenvalues at `epsilon`.
/// Returns (assembled, projected).
pub fn assemble_and_project(
    blocks: &[Vec<DMatrix<f64>>],
    epsilon: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let assembled = assemble(blocks)?;
    let projected = project_pd(&assembled, epsilon)?;
    Ok((assembled, projected))
}

// =============================================================================
// Fitted model
// =============================================================================

/// Fitted latent correlation structure on a grid. For the partially
/// separable flavor only marginal surfaces are present and cross blocks are
/// zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCorrelationModel {
    pub grid: Vec<f64>,
    pub n_components: usize,
    pub epsilon: f64,
    pub block_diagonal: bool,
    /// Surfaces for j ≤ k in row-major order of the upper triangle (only
    /// j = k when block-diagonal).
    pub surfaces: Vec<SplineSurface>,
    #[serde(with = "crate::serde_matrix")]
    pub covariance: DMatrix<f64>,
}

impl LatentCorrelationModel {
    pub fn new(
        grid: Vec<f64>,
        n_components: usize,
        surfaces: Vec<SplineSurface>,
        epsilon: f64,
        block_diagonal: bool,
    ) -> Result<Self> {
        let m = grid.len();
        let mut model = Self {
            grid,
            n_components,
            epsilon,
            block_diagonal,
            surfaces,
            covariance: DMatrix::zeros(0, 0),
        };
        let mut blocks = vec![vec![DMatrix::zeros(m, m); n_components]; n_components];
        for (a, row) in blocks.iter_mut().enumerate() {
            for (b, blk) in row.iter_mut().enumerate() {
                if let Some(block) = model.raw_block(a, b) {
                    *blk = block;
                }
            }
        }
        let (_, projected) = assemble_and_project(&blocks, epsilon)?;
        model.covariance = projected;
        Ok(model)
    }

    fn surface(&self, j: usize, k: usize) -> Option<&SplineSurface> {
        let (a, b) = if j <= k { (j, k) } else { (k, j) };
        self.surfaces.iter().find(|s| s.j == a && s.k == b)
    }

    /// Block (j, k) evaluated from the spline surfaces before projection.
    pub fn raw_block(&self, j: usize, k: usize) -> Option<DMatrix<f64>> {
        let surface = self.surface(j, k)?;
        let block = evaluate_block(surface, &self.grid);
        Some(if j <= k { block } else { block.transpose() })
    }

    /// Latent correlation between component `j` at `s` and `k` at `t` from
    /// the spline surfaces (unprojected).
    pub fn correlation(&self, j: usize, s: f64, k: usize, t: f64) -> f64 {
        if j == k && s == t {
            return 1.0;
        }
        match self.surface(j, k) {
            None => 0.0,
            Some(surface) => {
                let value = if j == k {
                    0.5 * (surface.eval(s, t) + surface.eval(t, s))
                } else if j < k {
                    surface.eval(s, t)
                } else {
                    surface.eval(t, s)
                };
                value
            }
        }
    }

    /// Block (j, k) of the projected covariance.
    pub fn block(&self, j: usize, k: usize) -> DMatrix<f64> {
        let m = self.grid.len();
        self.covariance.view((j * m, k * m), (m, m)).into_owned()
    }

    /// Block of the projected covariance restricted to `components`.
    pub fn sub_covariance(&self, components: &[usize]) -> DMatrix<f64> {
        let m = self.grid.len();
        let d = components.len() * m;
        let mut out = DMatrix::zeros(d, d);
        for (a, &j) in components.iter().enumerate() {
            for (b, &k) in components.iter().enumerate() {
                out.view_mut((a * m, b * m), (m, m))
                    .copy_from(&self.covariance.view((j * m, k * m), (m, m)));
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::PairKind;
    use crate::data::VariableType;
    use approx::assert_abs_diff_eq;

    #[test]
    fn link() {
        assert_eq!(link_g(0.0), 0.0);
        assert_abs_diff_eq!(link_g(1.0), (1f64.exp() - 1.0) / (1f64.exp() + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(link_g(50.0), 1.0, epsilon = 1e-15);
        for &x in &[-5.0, -0.3, 0.0, 2.2] {
            assert_abs_diff_eq!(link_g_inv(link_g(x)).unwrap(), x, epsilon = 1e-12);
        }
        assert!(link_g_inv(1.0).is_err());
    }

    #[test]
    fn basis_partition_of_unity() {
        for size in [2, 3, 4, 7, 10] {
            let basis = BSplineBasis::new(size).unwrap();
            for i in 0..=50 {
                let t = i as f64 / 50.0;
                let v = basis.eval(t);
                assert_abs_diff_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
                assert!(v.iter().all(|&x| x >= -1e-15));
            }
            assert_abs_diff_eq!(basis.eval(0.0)[0], 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(basis.eval(1.0)[size - 1], 1.0, epsilon = 1e-15);
        }
    }

    fn synthetic_targets(j: usize, k: usize, f: impl Fn(f64, f64) -> f64) -> BlockTargets {
        let kind = PairKind::new(VariableType::Continuous, VariableType::Continuous);
        let table = Arc::new(BridgeTable::build(&Bridge::default(), kind, &[], &[], 4).unwrap());
        let grid: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let mut cells = Vec::new();
        for &s in &grid {
            for &t in &grid {
                if j == k && s == t {
                    continue;
                }
                let tau = 2.0 / std::f64::consts::PI * f(s, t).asin();
                cells.push(CellTarget { s, t, tau, weight: 1.0, table: Arc::clone(&table) });
            }
        }
        let w = 1.0 / cells.len() as f64;
        cells.iter_mut().for_each(|c| c.weight = w);
        BlockTargets { j, k, cells }
    }

    #[test]
    fn constant_surface_recovered() {
        let targets = synthetic_targets(0, 1, |_, _| 0.4);
        let s = fit_targets(&targets, 5, &LmOptions::default()).unwrap();
        for i in 0..=20 {
            for l in 0..=20 {
                assert_abs_diff_eq!(s.eval(i as f64 / 20.0, l as f64 / 20.0), 0.4, epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn zero_surface_gives_zero_coefficients() {
        let targets = synthetic_targets(1, 1, |_, _| 0.0);
        let s = fit_targets(&targets, 6, &LmOptions::default()).unwrap();
        assert!(s.u.norm() <= 1e-4);
        assert_eq!(s.u, s.u.transpose());
    }

    #[test]
    fn smooth_marginal_surface_recovered() {
        let targets = synthetic_targets(0, 0, |s, t| 0.9 * (-(s - t).abs() * 1.2).exp());
        let s = fit_targets(&targets, 10, &LmOptions::default()).unwrap();
        assert!(s.diagnostics.converged);
        assert!(s.diagnostics.objective < 1e-4);
    }

    #[test]
    fn evaluate_block_contract() {
        let s = SplineSurface::constant(0, 0, 5, 0.4).unwrap();
        let grid = [0.0, 0.5, 1.0];
        let b = evaluate_block(&s, &grid);
        for a in 0..3 {
            for c in 0..3 {
                let want = if a == c { 1.0 } else { 0.4 };
                assert_abs_diff_eq!(b[(a, c)], want, epsilon = 1e-12);
            }
        }
        let mut cross = SplineSurface::constant(0, 1, 5, 0.1).unwrap();
        cross.u[(0, 3)] = 0.7;
        let grid: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
        let b = evaluate_block(&cross, &grid);
        for (a, &s) in grid.iter().enumerate() {
            for (c, &t) in grid.iter().enumerate() {
                assert_abs_diff_eq!(b[(a, c)], cross.eval(s, t), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn projection_rules() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let p = project_pd(&m, 1e-3).unwrap();
        assert!((p - &m).abs().max() <= 1e-10);
        let bad = DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, -0.1]);
        let p = project_pd(&bad, 1e-3).unwrap();
        let eig = SymmetricEigen::new(p).eigenvalues;
        assert_abs_diff_eq!(eig.min(), 1e-3, epsilon = 1e-15);
    }

    #[test]
    fn bic_penalty_arithmetic() {
        assert_abs_diff_eq!(bic_penalty(5, 100, true), 15.0 * 100f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(bic_penalty(5, 100, false), 25.0 * 100f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn assemble_rejects_mismatch() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::identity(3, 3);
        assert!(assemble(&[vec![a.clone(), b.clone()], vec![b, a]]).is_err());
    }
}
