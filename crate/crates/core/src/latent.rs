//! Subject-level prediction of the latent Gaussian trajectories: conditional
//! expectations given mixed observations (closed form for exact coordinates,
//! Gibbs sampling over interval-censored ones) and BLUP extension to a grid
//! or to arbitrary new time points.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covfit::{project_pd, LatentCorrelationModel};
use crate::data::{MixedDataset, Observation, VariableType};
use crate::error::{Error, Result};
use crate::marginals::{nearest_index, MarginalModel};
use crate::mvn::{quantile_unchecked, std_normal_cdf};

/// Split-chain mean difference above which a warning is logged.
pub const SPLIT_CHAIN_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GibbsOptions {
    pub burn_in: usize,
    pub draws: usize,
    pub seed: u64,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self {
            burn_in: 100,
            draws: 400,
            seed: 0x7361_6d70_6c65,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMethod {
    Deterministic,
    Sampler,
}

/// Predicted latent trajectories of one subject on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPrediction {
    pub subject: usize,
    pub grid: Vec<f64>,
    pub components: Vec<usize>,
    /// One row per entry of `components`, one column per grid point.
    #[serde(with = "crate::serde_matrix")]
    pub values: DMatrix<f64>,
    pub method: PredictionMethod,
    pub sampler: Option<GibbsOptions>,
    /// Largest difference between first- and second-half sampler means.
    pub split_difference: f64,
}

impl LatentPrediction {
    /// Values stacked component by component.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.values.len(),
            (0..self.values.nrows()).flat_map(|r| self.values.row(r).iter().copied().collect::<Vec<_>>()),
        )
    }
}

// =============================================================================
// Constraints
// =============================================================================

/// What an observation says about its latent coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    Exact(f64),
    /// Open-closed interval (lo, hi]; either end may be infinite.
    Interval(f64, f64),
}

/// Latent constraint implied by one observed value, using the marginal
/// estimates at pooled time index `ti`. `None` when the observation carries
/// no usable information.
pub fn observation_constraint(
    value: f64,
    vtype: VariableType,
    component: usize,
    ti: usize,
    marginals: &MarginalModel,
) -> Option<Constraint> {
    let interval = |lo: f64, hi: f64| {
        if lo == f64::NEG_INFINITY && hi == f64::INFINITY || lo >= hi {
            None
        } else {
            Some(Constraint::Interval(lo, hi))
        }
    };
    match vtype {
        VariableType::Continuous => marginals
            .transform(component, ti)
            .map(|f| Constraint::Exact(f.apply(value))),
        VariableType::Truncated => {
            let delta = marginals.cutoffs(component, ti)?[0];
            if value > 0.0 {
                match marginals.transform(component, ti) {
                    Some(f) => Some(Constraint::Exact(f.apply(value))),
                    None => interval(delta, f64::INFINITY),
                }
            } else {
                interval(f64::NEG_INFINITY, delta)
            }
        }
        VariableType::Binary => {
            let delta = marginals.cutoffs(component, ti)?[0];
            if value > 0.0 {
                interval(delta, f64::INFINITY)
            } else {
                interval(f64::NEG_INFINITY, delta)
            }
        }
        VariableType::Ordinal { .. } => {
            let cuts = marginals.cutoffs(component, ti)?;
            let level = value as usize;
            let lo = if level == 0 { f64::NEG_INFINITY } else { cuts[level - 1] };
            let hi = if level >= cuts.len() { f64::INFINITY } else { cuts[level] };
            interval(lo, hi)
        }
    }
}

/// Constraints of one subject snapped to `grid`, as (coordinate, constraint)
/// with coordinate = position of the component in `components` × m + grid
/// index. When several observations snap to one coordinate the one nearest
/// in time is kept.
pub fn grid_constraints(
    observations: &[(Observation, usize)],
    components: &[usize],
    grid: &[f64],
    types: &[VariableType],
    marginals: &MarginalModel,
) -> Vec<(usize, Constraint)> {
    let m = grid.len();
    let mut best: Vec<Option<(f64, Constraint)>> = vec![None; components.len() * m];
    for (o, ti) in observations {
        let Some(pos) = components.iter().position(|&c| c == o.component) else {
            continue;
        };
        let g = nearest_index(grid, o.time);
        let dist = (grid[g] - o.time).abs();
        let Some(c) = observation_constraint(o.value, types[o.component], o.component, *ti, marginals)
        else {
            continue;
        };
        let slot = &mut best[pos * m + g];
        if slot.as_ref().is_none_or(|(d, _)| dist < *d) {
            *slot = Some((dist, c));
        }
    }
    best.into_iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|(_, c)| (i, c)))
        .collect()
}

// =============================================================================
// Conditional expectation
// =============================================================================

/// Result of conditioning on one subject's constraints.
#[derive(Debug, Clone)]
pub struct Conditioned {
    /// Conditional expectation of the constrained coordinates, in the order given.
    pub observed_mean: DVector<f64>,
    /// Conditional covariance of the constrained coordinates; zero rows and
    /// columns for exact ones.
    pub observed_covariance: DMatrix<f64>,
    pub method: PredictionMethod,
    pub split_difference: f64,
}

/// E(V_O | constraints) for V_O ~ N(0, cov_oo): exact coordinates are fixed,
/// interval coordinates are averaged over a Gibbs chain run on their
/// conditional distribution given the exact ones.
pub fn condition_observed(
    cov_oo: &DMatrix<f64>,
    constraints: &[Constraint],
    options: &GibbsOptions,
    rng: &mut impl Rng,
) -> Result<Conditioned> {
    let n = constraints.len();
    let exact: Vec<usize> = (0..n)
        .filter(|&i| matches!(constraints[i], Constraint::Exact(_)))
        .collect();
    let censored: Vec<usize> = (0..n)
        .filter(|&i| matches!(constraints[i], Constraint::Interval(..)))
        .collect();
    let mut out = DVector::zeros(n);
    let z_e = DVector::from_iterator(
        exact.len(),
        exact.iter().map(|&i| match constraints[i] {
            Constraint::Exact(v) => v,
            Constraint::Interval(..) => unreachable!(),
        }),
    );
    for (a, &i) in exact.iter().enumerate() {
        out[i] = z_e[a];
    }
    if censored.is_empty() {
        return Ok(Conditioned {
            observed_mean: out,
            observed_covariance: DMatrix::zeros(n, n),
            method: PredictionMethod::Deterministic,
            split_difference: 0.0,
        });
    }

    let c_ii = select(cov_oo, &censored, &censored);
    let (mu, sigma) = if exact.is_empty() {
        (DVector::zeros(censored.len()), c_ii)
    } else {
        let c_ee = select(cov_oo, &exact, &exact);
        let c_ie = select(cov_oo, &censored, &exact);
        let chol = Cholesky::new(c_ee)
            .ok_or_else(|| Error::Singular("covariance of exact coordinates".into()))?;
        let a = chol.solve(&c_ie.transpose()).transpose();
        let mu = &a * &z_e;
        let sigma = c_ii - &a * c_ie.transpose();
        (mu, (&sigma + sigma.transpose()) * 0.5)
    };
    let precision = Cholesky::new(sigma)
        .ok_or_else(|| Error::Singular("conditional covariance of censored coordinates".into()))?
        .inverse();
    let bounds: Vec<(f64, f64)> = censored
        .iter()
        .map(|&i| match constraints[i] {
            Constraint::Interval(lo, hi) => (lo, hi),
            Constraint::Exact(_) => unreachable!(),
        })
        .collect();
    let (mean, var, split) = gibbs_mean(&mu, &precision, &bounds, options, rng);
    let mut out_cov = DMatrix::zeros(n, n);
    for (a, &i) in censored.iter().enumerate() {
        out[i] = mean[a];
        for (b, &k) in censored.iter().enumerate() {
            out_cov[(i, k)] = var[(a, b)];
        }
    }
    if split > SPLIT_CHAIN_THRESHOLD {
        log::debug!("Gibbs split-chain mean difference {split:.3} exceeds {SPLIT_CHAIN_THRESHOLD}");
    }
    Ok(Conditioned {
        observed_mean: out,
        observed_covariance: out_cov,
        method: PredictionMethod::Sampler,
        split_difference: split,
    })
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

/// Posterior mean of a truncated multivariate normal by coordinate-wise Gibbs
/// sampling in precision form; returns the mean, the covariance of the draws
/// and the split-chain difference.
fn gibbs_mean(
    mu: &DVector<f64>,
    precision: &DMatrix<f64>,
    bounds: &[(f64, f64)],
    options: &GibbsOptions,
    rng: &mut impl Rng,
) -> (DVector<f64>, DMatrix<f64>, f64) {
    let d = mu.len();
    let sd: Vec<f64> = (0..d).map(|i| precision[(i, i)].recip().sqrt()).collect();
    // start from the marginal truncated means, which are feasible
    let mut x: Vec<f64> = (0..d)
        .map(|i| {
            let s = (precision[(i, i)].recip()).sqrt();
            truncated_normal_mean(mu[i], s, bounds[i].0, bounds[i].1)
        })
        .collect();
    let draws = options.draws.max(2);
    let half = draws / 2;
    let mut first = vec![0.0; d];
    let mut second = vec![0.0; d];
    let mut cross = DMatrix::<f64>::zeros(d, d);
    for sweep in 0..(options.burn_in + draws) {
        for i in 0..d {
            let mut acc = 0.0;
            for l in 0..d {
                if l != i {
                    acc += precision[(i, l)] * (x[l] - mu[l]);
                }
            }
            let m = mu[i] - acc / precision[(i, i)];
            x[i] = sample_truncated_normal(rng, m, sd[i], bounds[i].0, bounds[i].1);
        }
        if sweep >= options.burn_in {
            let target = if sweep - options.burn_in < half {
                &mut first
            } else {
                &mut second
            };
            for (t, v) in target.iter_mut().zip(&x) {
                *t += v;
            }
            for b in 0..d {
                for a in 0..d {
                    cross[(a, b)] += x[a] * x[b];
                }
            }
        }
    }
    let n2 = (draws - half) as f64;
    let mut split: f64 = 0.0;
    let mean = DVector::from_iterator(
        d,
        (0..d).map(|i| {
            split = split.max((first[i] / half as f64 - second[i] / n2).abs());
            (first[i] + second[i]) / draws as f64
        }),
    );
    let mut cov = cross / draws as f64 - &mean * mean.transpose();
    cov = (&cov + cov.transpose()) * 0.5;
    (mean, cov, split)
}

// =============================================================================
// Truncated normal
// =============================================================================

/// Mean of N(mu, sd²) restricted to (lo, hi].
pub fn truncated_normal_mean(mu: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let a = (lo - mu) / sd;
    let b = (hi - mu) / sd;
    let z = if a >= 8.0 {
        upper_tail_mean(a, b)
    } else if b <= -8.0 {
        -upper_tail_mean(-b, -a)
    } else {
        let (pa, pb) = (phi_pdf(a), phi_pdf(b));
        // use the tail on the side with more precision
        let mass = if a > 0.0 {
            std_normal_cdf(-a) - std_normal_cdf(-b)
        } else {
            std_normal_cdf(b) - std_normal_cdf(a)
        };
        (pa - pb) / mass
    };
    mu + sd * z
}

/// Standardized mean on (a, b] for a ≥ 8, written with Mills ratios so that
/// nothing underflows.
fn upper_tail_mean(a: f64, b: f64) -> f64 {
    if b.is_infinite() {
        return 1.0 / mills_ratio(a);
    }
    // φ(b)/φ(a)
    let r = (0.5 * (a - b) * (a + b)).exp();
    (1.0 - r) / (mills_ratio(a) - mills_ratio(b) * r)
}

/// (1 − Φ(x))/φ(x) for x ≥ 8 by its continued fraction.
fn mills_ratio(x: f64) -> f64 {
    let mut acc = x;
    for k in (1..=60).rev() {
        acc = x + k as f64 / acc;
    }
    1.0 / acc
}

fn phi_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        crate::mvn::std_normal_pdf(x)
    }
}

/// Draw from N(mu, sd²) restricted to (lo, hi]. Inverse-CDF sampling on the
/// numerically favorable tail; Robert's exponential rejection sampler when
/// the interval lies far in a tail.
pub fn sample_truncated_normal(rng: &mut impl Rng, mu: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let a = (lo - mu) / sd;
    let b = (hi - mu) / sd;
    let z = if a >= 8.0 {
        tail_rejection(rng, a, b)
    } else if b <= -8.0 {
        -tail_rejection(rng, -b, -a)
    } else if a > 0.0 {
        // upper tail: work with survival probabilities
        let (qa, qb) = (std_normal_cdf(-a), std_normal_cdf(-b));
        let u: f64 = rng.random();
        let q = qb + u * (qa - qb);
        (-quantile_unchecked(q)).clamp(a, b)
    } else {
        let (pa, pb) = (std_normal_cdf(a), std_normal_cdf(b));
        let u: f64 = rng.random();
        let p = pa + u * (pb - pa);
        quantile_unchecked(p).clamp(a, b)
    };
    mu + sd * z
}

/// Robert (1995) sampler for the standard normal on (a, b] with a ≥ 8.
fn tail_rejection(rng: &mut impl Rng, a: f64, b: f64) -> f64 {
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    let width = b - a;
    let mass = if width.is_finite() { 1.0 - (-alpha * width).exp() } else { 1.0 };
    loop {
        let u: f64 = rng.random();
        let z = a - (1.0 - u * mass).ln() / alpha;
        let v: f64 = rng.random();
        if v <= (-0.5 * (z - alpha) * (z - alpha)).exp() && z <= b {
            return z;
        }
    }
}

// =============================================================================
// Grid predictions
// =============================================================================

/// Mixes a base seed with a subject index into an independent stream seed.
pub fn subject_seed(base: u64, subject: usize) -> u64 {
    let mut z = base ^ (subject as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Latent prediction on `grid` for the components listed, given the grid
/// covariance `cov` of those components (stacked component by component).
pub fn predict_on_grid(
    subject: usize,
    observations: &[(Observation, usize)],
    types: &[VariableType],
    marginals: &MarginalModel,
    grid: &[f64],
    components: &[usize],
    cov: &DMatrix<f64>,
    options: &GibbsOptions,
) -> Result<LatentPrediction> {
    let m = grid.len();
    let d = components.len() * m;
    if cov.nrows() != d || cov.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}, expected {d}x{d}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let constraints = grid_constraints(observations, components, grid, types, marginals);
    let mut values = DMatrix::zeros(components.len(), m);
    let mut method = PredictionMethod::Deterministic;
    let mut split = 0.0;
    if !constraints.is_empty() {
        let coords: Vec<usize> = constraints.iter().map(|(i, _)| *i).collect();
        let cs: Vec<Constraint> = constraints.iter().map(|(_, c)| *c).collect();
        let c_oo = select(cov, &coords, &coords);
        let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(options.seed, subject));
        let cond = condition_observed(&c_oo, &cs, options, &mut rng)?;
        method = cond.method;
        split = cond.split_difference;
        let all: Vec<usize> = (0..d).collect();
        let c_ao = select(cov, &all, &coords);
        let chol = Cholesky::new(c_oo)
            .ok_or_else(|| Error::Singular("observed covariance block".into()))?;
        let pred = c_ao * chol.solve(&cond.observed_mean);
        for i in 0..d {
            values[(i / m, i % m)] = pred[i];
        }
    }
    Ok(LatentPrediction {
        subject,
        grid: grid.to_vec(),
        components: components.to_vec(),
        values,
        method,
        sampler: (method == PredictionMethod::Sampler).then_some(*options),
        split_difference: split,
    })
}

/// Predictions for every subject, in subject order.
pub fn predict_all(
    data: &MixedDataset,
    marginals: &MarginalModel,
    grid: &[f64],
    components: &[usize],
    cov: &DMatrix<f64>,
    options: &GibbsOptions,
) -> Result<Vec<LatentPrediction>> {
    let types = data.types();
    (0..data.n_subjects())
        .into_par_iter()
        .map(|i| {
            let obs = data.subject_observations(i);
            predict_on_grid(i, &obs, &types, marginals, grid, components, cov, options)
        })
        .collect()
}

/// Latent prediction of one subject on the model grid for all components.
pub fn predict_latent(
    data: &MixedDataset,
    subject: usize,
    model: &LatentCorrelationModel,
    marginals: &MarginalModel,
    options: &GibbsOptions,
) -> Result<LatentPrediction> {
    if subject >= data.n_subjects() {
        return Err(Error::InvalidArgument(format!("unknown subject index {subject}")));
    }
    let components: Vec<usize> = (0..model.n_components).collect();
    predict_on_grid(
        subject,
        &data.subject_observations(subject),
        &data.types(),
        marginals,
        &model.grid,
        &components,
        &model.covariance,
        options,
    )
}

// =============================================================================
// Prediction at new times
// =============================================================================

/// Predictions at requested times for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePrediction {
    pub subject: usize,
    /// Per component: (time, latent BLUP, conditional variance, observed-scale value).
    pub components: Vec<Vec<CurvePoint>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub time: f64,
    pub latent: f64,
    pub variance: f64,
    pub observed: f64,
}

/// Joint BLUP at `new_times[j]` for every component j given all of the
/// subject's observations. The covariance over the union of observed and
/// new coordinates is built from the spline surfaces and PD-projected with
/// the model's ε.
pub fn predict_curves(
    data: &MixedDataset,
    subject: usize,
    new_times: &[Vec<f64>],
    model: &LatentCorrelationModel,
    marginals: &MarginalModel,
    options: &GibbsOptions,
) -> Result<CurvePrediction> {
    let jn = model.n_components;
    if new_times.len() != jn {
        return Err(Error::DimensionMismatch(format!(
            "{} time lists for {jn} components",
            new_times.len()
        )));
    }
    if new_times.iter().flatten().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidArgument("prediction times must lie in [0, 1]".into()));
    }
    if subject >= data.n_subjects() {
        return Err(Error::InvalidArgument(format!("unknown subject index {subject}")));
    }
    let types = data.types();
    let observations = data.subject_observations(subject);

    // coordinates: observed first, then requested ones not already observed
    let mut coords: Vec<(usize, f64)> = Vec::new();
    let mut constraints: Vec<Constraint> = Vec::new();
    for (o, ti) in &observations {
        if let Some(c) = observation_constraint(o.value, types[o.component], o.component, *ti, marginals) {
            coords.push((o.component, o.time));
            constraints.push(c);
        }
    }
    let n_obs = coords.len();
    let mut request_index: Vec<Vec<usize>> = Vec::with_capacity(jn);
    for (j, times) in new_times.iter().enumerate() {
        let mut idx = Vec::with_capacity(times.len());
        for &t in times {
            let found = coords.iter().position(|&(c, s)| c == j && s == t);
            idx.push(match found {
                Some(p) => p,
                None => {
                    coords.push((j, t));
                    coords.len() - 1
                }
            });
        }
        request_index.push(idx);
    }
    let d = coords.len();
    let raw = DMatrix::from_fn(d, d, |a, b| {
        model.correlation(coords[a].0, coords[a].1, coords[b].0, coords[b].1)
    });
    let cov = project_pd(&raw, model.epsilon)?;

    let (mean, cond_cov) = if n_obs == 0 {
        (DVector::zeros(d), cov.clone())
    } else {
        let obs_idx: Vec<usize> = (0..n_obs).collect();
        let all: Vec<usize> = (0..d).collect();
        let c_oo = select(&cov, &obs_idx, &obs_idx);
        let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(options.seed, subject));
        let cond = condition_observed(&c_oo, &constraints, options, &mut rng)?;
        let c_ao = select(&cov, &all, &obs_idx);
        let chol = Cholesky::new(c_oo).ok_or_else(|| Error::Singular("observed covariance block".into()))?;
        let mean = &c_ao * chol.solve(&cond.observed_mean);
        // law of total variance: Gaussian residual plus the spread of V_O
        let gain = chol.solve(&c_ao.transpose()).transpose();
        let cond_cov = &cov - &gain * c_ao.transpose() + &gain * &cond.observed_covariance * gain.transpose();
        (mean, cond_cov)
    };

    let components = request_index
        .iter()
        .enumerate()
        .map(|(j, idx)| {
            idx.iter()
                .zip(&new_times[j])
                .map(|(&c, &t)| CurvePoint {
                    time: t,
                    latent: mean[c],
                    variance: cond_cov[(c, c)].max(0.0),
                    observed: observed_scale(mean[c], j, types[j], t, marginals),
                })
                .collect()
        })
        .collect();
    Ok(CurvePrediction { subject, components })
}

/// Maps a latent prediction to the observed scale with the marginal
/// estimates at the nearest pooled time where they are available.
pub fn observed_scale(latent: f64, j: usize, vtype: VariableType, t: f64, marginals: &MarginalModel) -> f64 {
    let times = marginals.times();
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| (times[a] - t).abs().total_cmp(&(times[b] - t).abs()).then(a.cmp(&b)));
    match vtype {
        VariableType::Continuous => order
            .iter()
            .find_map(|&ti| marginals.transform(j, ti))
            .map_or(f64::NAN, |f| f.inverse(latent)),
        VariableType::Binary | VariableType::Ordinal { .. } => order
            .iter()
            .find_map(|&ti| marginals.cutoffs(j, ti))
            .map_or(f64::NAN, |c| c.iter().filter(|&&v| latent > v).count() as f64),
        VariableType::Truncated => {
            let Some(&ti) = order.iter().find(|&&ti| marginals.cutoffs(j, ti).is_some()) else {
                return f64::NAN;
            };
            let delta = marginals.cutoffs(j, ti).expect("checked")[0];
            if latent <= delta {
                0.0
            } else {
                order
                    .iter()
                    .find_map(|&ti| marginals.transform(j, ti))
                    .map_or(f64::NAN, |f| f.inverse(latent))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn truncated_normal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(mu, sd, lo, hi) in &[
            (0.0, 1.0, 0.5, f64::INFINITY),
            (0.3, 2.0, f64::NEG_INFINITY, -1.0),
            (0.0, 1.0, -0.2, 0.4),
            (0.0, 1.0, 9.0, f64::INFINITY),
            (1.0, 0.5, -30.0, -29.0),
        ] {
            let n = 40_000;
            let draws: Vec<f64> = (0..n).map(|_| sample_truncated_normal(&mut rng, mu, sd, lo, hi)).collect();
            assert!(draws.iter().all(|&x| x >= lo && x <= hi));
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let want = truncated_normal_mean(mu, sd, lo, hi);
            if want.is_finite() && ((hi - lo) < 1e3 || lo > 0.0 || hi < 0.0) {
                assert!((mean - want).abs() <= 4.0 * (var / n as f64).sqrt() + 1e-3, "{mean} vs {want}");
            }
        }
    }

    #[test]
    fn exact_constraints_are_closed_form() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = condition_observed(&cov, &[Constraint::Exact(0.3), Constraint::Exact(-1.0)], &GibbsOptions::default(), &mut rng)
            .unwrap();
        assert_eq!(c.method, PredictionMethod::Deterministic);
        assert_eq!(c.observed_mean.as_slice(), &[0.3, -1.0]);
    }

    #[test]
    fn narrow_interval_matches_exact() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, 0.3, 0.6, 1.0, 0.5, 0.3, 0.5, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = condition_observed(
            &cov,
            &[Constraint::Exact(0.8), Constraint::Interval(-0.401, -0.399), Constraint::Interval(0.0, f64::INFINITY)],
            &GibbsOptions { burn_in: 100, draws: 2000, seed: 0 },
            &mut rng,
        )
        .unwrap();
        assert_abs_diff_eq!(c.observed_mean[1], -0.4, epsilon = 2e-3);
        // third coordinate: E(Z3 | Z1, Z2, Z3 > 0) from the closed-form conditional
        let c12 = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
        let c3 = DVector::from_vec(vec![0.3, 0.5]);
        let w = c12.clone().cholesky().unwrap().solve(&c3);
        let mu = w.dot(&DVector::from_vec(vec![0.8, -0.4]));
        let sd = (1.0_f64 - w.dot(&c3)).sqrt();
        let want = truncated_normal_mean(mu, sd, 0.0, f64::INFINITY);
        assert_abs_diff_eq!(c.observed_mean[2], want, epsilon = 0.03);
    }

    #[test]
    fn sampler_covariance_matches_truncated_variance() {
        // one censored coordinate, Z > 0 with Z ~ N(0, 1): Var = 1 − 2/π
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = condition_observed(
            &cov,
            &[Constraint::Exact(0.2), Constraint::Interval(0.0, f64::INFINITY)],
            &GibbsOptions { burn_in: 50, draws: 20_000, seed: 0 },
            &mut rng,
        )
        .unwrap();
        let want = 1.0 - 2.0 / std::f64::consts::PI;
        assert_abs_diff_eq!(c.observed_covariance[(1, 1)], want, epsilon = 0.02);
        assert_eq!(c.observed_covariance[(0, 0)], 0.0);
        assert_eq!(c.observed_covariance[(0, 1)], 0.0);
    }

    #[test]
    fn seeds_differ_per_subject() {
        assert_ne!(subject_seed(1, 0), subject_seed(1, 1));
        assert_eq!(subject_seed(5, 3), subject_seed(5, 3));
    }
}
