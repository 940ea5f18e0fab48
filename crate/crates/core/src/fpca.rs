//! Multivariate FPCA of predicted latent trajectories, in the full flavor
//! (vector-valued eigenfunctions) and the partially separable flavor
//! (eigenfunctions shared across components).

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::covfit::LatentCorrelationModel;
use crate::error::{Error, Result};
use crate::latent::LatentPrediction;

/// Default cumulative explained-variance threshold for choosing L.
pub const DEFAULT_VAR_THRESHOLD: f64 = 0.95;

/// Trapezoid quadrature weights on a strictly increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Result<Vec<f64>> {
    let m = grid.len();
    if m < 2 {
        return Err(Error::InvalidArgument("quadrature needs at least two grid points".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
    }
    let mut w = vec![0.0; m];
    for i in 0..m - 1 {
        let h = 0.5 * (grid[i + 1] - grid[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Full,
    PartiallySeparable,
}

/// Eigenvalues, eigenfunctions and scores of one decomposition.
///
/// Full flavor: each eigenfunction column has J·m entries (stacked by
/// component) and each subject has one score per ℓ. Partially separable:
/// eigenfunction columns have m entries and each subject has a J-vector of
/// scores per ℓ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    pub flavor: Flavor,
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub components: Vec<usize>,
    /// Full clipped spectrum, descending.
    pub eigenvalues: Vec<f64>,
    /// Number of leading eigenpairs retained.
    pub retained: usize,
    /// One column per eigenvalue.
    #[serde(with = "crate::serde_matrix")]
    pub eigenfunctions: DMatrix<f64>,
    /// Cross-subject mean of the latents, stacked like the full flavor.
    pub mean: Vec<f64>,
    /// Subject indices in row order of `scores`.
    pub subjects: Vec<usize>,
    /// Row per subject; column ℓ·width + j with width 1 (full) or J (ps).
    #[serde(with = "crate::serde_matrix")]
    pub scores: DMatrix<f64>,
    /// Pooled marginal covariance H (ps only).
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_matrix")]
    pub pooled: Option<DMatrix<f64>>,
    /// Σ̂_ℓ for the retained ℓ (ps only).
    #[serde(default, with = "crate::serde_matrix::list")]
    pub score_covariances: Vec<DMatrix<f64>>,
}

mod opt_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(transparent)]
    struct Wrapped(#[serde(with = "crate::serde_matrix")] DMatrix<f64>);

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.clone().map(Wrapped).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Ok(Option::<Wrapped>::deserialize(d)?.map(|w| w.0))
    }
}

impl EigenSystem {
    fn width(&self) -> usize {
        match self.flavor {
            Flavor::Full => 1,
            Flavor::PartiallySeparable => self.components.len(),
        }
    }

    /// Number of eigenfunctions with scores.
    pub fn n_functions(&self) -> usize {
        self.scores.ncols() / self.width()
    }

    /// Score of subject row `i` on eigenfunction `l`, for component slot `j`
    /// (ignored in the full flavor).
    pub fn score(&self, i: usize, l: usize, j: usize) -> f64 {
        let w = self.width();
        self.scores[(i, l * w + if w == 1 { 0 } else { j })]
    }

    /// Eigenfunction `l` as a components × m matrix (full) or 1 × m (ps).
    pub fn eigenfunction(&self, l: usize) -> DMatrix<f64> {
        let m = self.grid.len();
        let col = self.eigenfunctions.column(l);
        DMatrix::from_fn(col.len() / m, m, |r, c| col[r * m + c])
    }

    /// Quadrature Gram matrix of the first `n` eigenfunctions.
    pub fn gram(&self, n: usize) -> DMatrix<f64> {
        let phi = self.eigenfunctions.columns(0, n);
        let w = self.stacked_weights(phi.nrows());
        let wphi = DMatrix::from_fn(phi.nrows(), n, |r, c| w[r] * phi[(r, c)]);
        phi.transpose() * wphi
    }

    fn stacked_weights(&self, len: usize) -> Vec<f64> {
        self.weights.iter().copied().cycle().take(len).collect()
    }

    /// Reconstruction of subject row `i` from the first `n` eigenpairs,
    /// as a components × m matrix.
    pub fn reconstruct(&self, i: usize, n: usize) -> DMatrix<f64> {
        let m = self.grid.len();
        let jn = self.components.len();
        let mut out = DMatrix::from_fn(jn, m, |r, c| self.mean[r * m + c]);
        for l in 0..n {
            let phi = self.eigenfunction(l);
            for r in 0..jn {
                let (xi, pr) = match self.flavor {
                    Flavor::Full => (self.score(i, l, 0), r),
                    Flavor::PartiallySeparable => (self.score(i, l, r), 0),
                };
                for c in 0..m {
                    out[(r, c)] += xi * phi[(pr, c)];
                }
            }
        }
        out
    }

    /// Covariance implied by the retained ps eigenpairs:
    /// C_jk(s, t) = Σ_ℓ Σ̂_ℓ[j, k] φ_ℓ(s) φ_ℓ(t), stacked by component.
    pub fn ps_covariance(&self) -> Result<DMatrix<f64>> {
        if self.flavor != Flavor::PartiallySeparable {
            return Err(Error::InvalidArgument("not a partially separable system".into()));
        }
        let m = self.grid.len();
        let jn = self.components.len();
        let mut out = DMatrix::zeros(jn * m, jn * m);
        for (l, sigma) in self.score_covariances.iter().enumerate() {
            let phi = self.eigenfunctions.column(l);
            for a in 0..jn {
                for b in 0..jn {
                    let sab = sigma[(a, b)];
                    for s in 0..m {
                        for t in 0..m {
                            out[(a * m + s, b * m + t)] += sab * phi[s] * phi[t];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Writes columns subject_id, l, component, score for the retained
    /// eigenfunctions. `names` maps subject indices to identifiers and
    /// `component_names` maps component indices to names; the full flavor
    /// writes "all" as component.
    pub fn write_scores_csv(
        &self,
        path: &Path,
        names: &[String],
        component_names: &[String],
    ) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["subject_id", "l", "component", "score"])?;
        let n_fun = self.retained.min(self.n_functions());
        for (row, &subject) in self.subjects.iter().enumerate() {
            let id = names.get(subject).cloned().unwrap_or_else(|| subject.to_string());
            for l in 0..n_fun {
                match self.flavor {
                    Flavor::Full => w.write_record([
                        id.clone(),
                        (l + 1).to_string(),
                        "all".to_string(),
                        self.score(row, l, 0).to_string(),
                    ])?,
                    Flavor::PartiallySeparable => {
                        for (slot, &j) in self.components.iter().enumerate() {
                            let comp = component_names.get(j).cloned().unwrap_or_else(|| j.to_string());
                            w.write_record([
                                id.clone(),
                                (l + 1).to_string(),
                                comp,
                                self.score(row, l, slot).to_string(),
                            ])?;
                        }
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Rescales a covariance to unit diagonal. Zero-variance coordinates get
/// a unit diagonal and zero off-diagonals.
pub fn to_correlation(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sd: Vec<f64> = cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    DMatrix::from_fn(cov.nrows(), cov.ncols(), |r, c| {
        if r == c {
            1.0
        } else if sd[r] > 0.0 && sd[c] > 0.0 {
            cov[(r, c)] / (sd[r] * sd[c])
        } else {
            0.0
        }
    })
}

/// Per-ℓ fractions λ_ℓ/Σλ and their cumulative sums.
pub fn explained_variance(eigenvalues: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("total variance is zero".into()));
    }
    let frac: Vec<f64> = eigenvalues.iter().map(|l| l / total).collect();
    let cum = frac
        .iter()
        .scan(0.0, |acc, f| {
            *acc += f;
            Some(*acc)
        })
        .collect();
    Ok((frac, cum))
}

/// Smallest L whose cumulative fraction reaches `threshold`.
pub fn retained_count(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let (_, cum) = explained_variance(eigenvalues)?;
    Ok(cum
        .iter()
        .position(|&c| c >= threshold - 1e-12)
        .map_or(cum.len(), |p| p + 1))
}

/// Stacked latents (rows = subjects) after checking a common layout.
fn stack(latents: &[LatentPrediction]) -> Result<(DMatrix<f64>, Vec<f64>, Vec<usize>)> {
    if latents.len() < 2 {
        return Err(Error::InvalidArgument("FPCA needs at least two subjects".into()));
    }
    let grid = latents[0].grid.clone();
    let comps = latents[0].components.clone();
    if latents.iter().any(|p| p.grid != grid || p.components != comps) {
        return Err(Error::DimensionMismatch("latent predictions use different grids or components".into()));
    }
    let d = grid.len() * comps.len();
    let mut x = DMatrix::zeros(latents.len(), d);
    for (i, p) in latents.iter().enumerate() {
        x.row_mut(i).copy_from(&p.stacked().transpose());
    }
    Ok((x, grid, comps))
}

fn center(x: &mut DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    let mean: Vec<f64> = x.column_iter().map(|c| c.sum() / n).collect();
    for (c, mu) in mean.iter().enumerate() {
        x.column_mut(c).add_scalar_mut(-mu);
    }
    mean
}

/// Eigenpairs of the operator with kernel `k` under quadrature weights `w`:
/// descending, clipped at zero, φᵀWφ = I and each φ's largest-magnitude entry
/// positive.
pub fn weighted_eigen(k: &DMatrix<f64>, w: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let d = k.nrows();
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut a = DMatrix::from_fn(d, d, |r, c| sw[r] * k[(r, c)] * sw[c]);
    a = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut phi = DMatrix::zeros(d, d);
    for (col, &i) in order.iter().enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(i).into_owned();
        for r in 0..d {
            v[r] /= sw[r];
        }
        let lead = v.iter().copied().fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            v.neg_mut();
        }
        phi.set_column(col, &v);
    }
    (values, phi)
}

/// Full multivariate FPCA: eigendecomposition of the weighted empirical
/// covariance (divisor n − 1) of the centered stacked latents.
pub fn mfpca_full(latents: &[LatentPrediction], var_threshold: f64) -> Result<EigenSystem> {
    let (mut x, grid, comps) = stack(latents)?;
    let w = trapezoid_weights(&grid)?;
    let mean = center(&mut x);
    let n = x.nrows();
    let cov = x.transpose() * &x / (n as f64 - 1.0);
    let ws: Vec<f64> = w.iter().copied().cycle().take(cov.nrows()).collect();
    let (values, phi) = weighted_eigen(&cov, &ws);
    let retained = retained_count(&values, var_threshold)?;
    let wphi = DMatrix::from_fn(phi.nrows(), phi.ncols(), |r, c| ws[r] * phi[(r, c)]);
    let scores = &x * wphi;
    Ok(EigenSystem {
        flavor: Flavor::Full,
        grid,
        weights: w,
        components: comps,
        eigenvalues: values,
        retained,
        eigenfunctions: phi,
        mean,
        subjects: latents.iter().map(|p| p.subject).collect(),
        scores,
        pooled: None,
        score_covariances: Vec::new(),
    })
}

/// Elementwise mean of the marginal blocks.
pub fn pool_blocks(blocks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no marginal blocks to pool".into()))?;
    if blocks.iter().any(|b| b.shape() != first.shape()) {
        return Err(Error::DimensionMismatch("marginal blocks differ in size".into()));
    }
    let sum = blocks.iter().skip(1).fold(first.clone(), |acc, b| acc + b);
    let h = sum / blocks.len() as f64;
    Ok((&h + h.transpose()) * 0.5)
}

/// Pooled marginal covariance H from the fitted marginal surfaces.
pub fn ps_pool(model: &LatentCorrelationModel) -> Result<DMatrix<f64>> {
    let blocks = (0..model.n_components)
        .map(|j| {
            model
                .raw_block(j, j)
                .ok_or_else(|| Error::InvalidArgument(format!("no marginal surface for component {j}")))
        })
        .collect::<Result<Vec<_>>>()?;
    pool_blocks(&blocks)
}

/// Partially separable decomposition: eigenfunctions of `h` shared across
/// components, per-component scores of the centered latents and the
/// empirical score covariances Σ̂_ℓ of the first `l` eigenfunctions.
pub fn ps_decompose(latents: &[LatentPrediction], h: &DMatrix<f64>, l: usize) -> Result<EigenSystem> {
    let (mut x, grid, comps) = stack(latents)?;
    let m = grid.len();
    if h.nrows() != m || h.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "pooled covariance is {}x{}, grid has {m} points",
            h.nrows(),
            h.ncols()
        )));
    }
    if l == 0 || l > m {
        return Err(Error::InvalidArgument(format!("L must lie in 1..={m}, got {l}")));
    }
    let w = trapezoid_weights(&grid)?;
    let mean = center(&mut x);
    let (values, phi) = weighted_eigen(h, &w);
    let jn = comps.len();
    let n = x.nrows();
    let mut scores = DMatrix::zeros(n, m * jn);
    for i in 0..n {
        for f in 0..m {
            for j in 0..jn {
                let mut acc = 0.0;
                for t in 0..m {
                    acc += w[t] * x[(i, j * m + t)] * phi[(t, f)];
                }
                scores[(i, f * jn + j)] = acc;
            }
        }
    }
    let mut sigmas = Vec::with_capacity(l);
    for f in 0..l {
        let xi = scores.columns(f * jn, jn);
        let mu = xi.row_mean();
        let c = DMatrix::from_fn(n, jn, |r, k| xi[(r, k)] - mu[k]);
        sigmas.push(c.transpose() * &c / (n as f64 - 1.0));
    }
    Ok(EigenSystem {
        flavor: Flavor::PartiallySeparable,
        grid,
        weights: w,
        components: comps,
        eigenvalues: values,
        retained: l,
        eigenfunctions: phi,
        mean,
        subjects: latents.iter().map(|p| p.subject).collect(),
        scores,
        pooled: Some(h.clone()),
        score_covariances: sigmas,
    })
}
