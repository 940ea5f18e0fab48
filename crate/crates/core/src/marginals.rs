//! Pointwise marginal estimation: cutoffs for discrete and truncated
//! components, rank-based monotone transforms for continuous and truncated
//! ones, and the forward observation maps.

use crate::data::{MixedDataset, VariableType};
use crate::error::{Error, Result};
use crate::mvn::{quantile_unchecked, std_normal_cdf};

/// Method-of-moments cutoffs from the empirical distribution at one time
/// point. Binary and truncated components use the proportion of zeros,
/// ordinal ones the cumulative level proportions.
pub fn estimate_cutoffs(values: &[f64], vtype: VariableType) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "cutoff estimation needs at least one observation".into(),
        ));
    }
    let n = values.len() as f64;
    match vtype {
        VariableType::Continuous => Err(Error::InvalidArgument(
            "continuous components have no cutoffs".into(),
        )),
        VariableType::Binary | VariableType::Truncated => {
            let zeros = values.iter().filter(|&&v| v == 0.0).count() as f64;
            Ok(vec![quantile_unchecked(zeros / n)])
        }
        VariableType::Ordinal { levels } => {
            let mut counts = vec![0usize; levels as usize];
            for &v in values {
                let level = v as usize;
                if v < 0.0 || v.fract() != 0.0 || level >= counts.len() {
                    return Err(Error::InvalidArgument(format!(
                        "value {v} is not a level of an ordinal with {levels} levels"
                    )));
                }
                counts[level] += 1;
            }
            let mut cumulative = 0usize;
            Ok(counts[..counts.len() - 1]
                .iter()
                .map(|&c| {
                    cumulative += c;
                    quantile_unchecked(cumulative as f64 / n)
                })
                .collect())
        }
    }
}

/// The observation map from a latent value to the observed scale, with the
/// identity as the monotone transform.
pub fn apply_observation_map(latent: f64, vtype: VariableType, cutoffs: &[f64]) -> f64 {
    match vtype {
        VariableType::Continuous => latent,
        VariableType::Truncated => {
            if latent > cutoffs[0] {
                latent
            } else {
                0.0
            }
        }
        VariableType::Binary => {
            if latent > cutoffs[0] {
                1.0
            } else {
                0.0
            }
        }
        VariableType::Ordinal { .. } => cutoffs.iter().filter(|&&c| latent > c).count() as f64,
    }
}

// =============================================================================
// Monotone transforms
// =============================================================================

/// Piecewise-linear estimate of x ↦ Φ⁻¹(Ĝ(x)) with knots at the observed
/// support, clamped outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneTransform {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl MonotoneTransform {
    /// Ĝ counts all `n` values and divides by `n + 1`. For truncated
    /// components the knots are the distinct positive values, so the
    /// transform lives above the zero-mass cutoff.
    pub fn estimate(values: &[f64], vtype: VariableType) -> Result<Self> {
        if !matches!(vtype, VariableType::Continuous | VariableType::Truncated) {
            return Err(Error::InvalidArgument(format!(
                "transforms are estimated for continuous and truncated components, not {vtype}"
            )));
        }
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let denom = (n + 1) as f64;
        let mut knots = Vec::new();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            let x = sorted[i];
            let mut j = i;
            while j < n && sorted[j] == x {
                j += 1;
            }
            if vtype == VariableType::Continuous || x > 0.0 {
                knots.push(x);
                out.push(quantile_unchecked(j as f64 / denom));
            }
            i = j;
        }
        if knots.len() < 2 {
            return Err(Error::Unidentifiable(format!(
                "transform needs at least two distinct {} values, got {}",
                if vtype == VariableType::Truncated {
                    "positive"
                } else {
                    "observed"
                },
                knots.len()
            )));
        }
        Ok(Self {
            knots,
            values: out,
        })
    }

    /// Transform through the given (knot, latent value) pairs; both must be
    /// strictly increasing.
    pub fn from_knots(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|x| x.is_finite());
        if knots.len() < 2 || knots.len() != values.len() || !increasing(&knots) || !increasing(&values) {
            return Err(Error::InvalidArgument(
                "transform needs at least two strictly increasing knot/value pairs".into(),
            ));
        }
        Ok(Self { knots, values })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Latent-scale value of an observation.
    pub fn apply(&self, x: f64) -> f64 {
        interpolate(&self.knots, &self.values, x)
    }

    /// Observed-scale value of a latent quantity.
    pub fn inverse(&self, z: f64) -> f64 {
        interpolate(&self.values, &self.knots, z)
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|&k| k <= x);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let (y0, y1) = (ys[i - 1], ys[i]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

// =============================================================================
// Marginal model
// =============================================================================

/// Pointwise cutoffs and transforms for every component at every pooled time.
/// Cells without enough data to estimate hold `None`.
#[derive(Debug, Clone)]
pub struct MarginalModel {
    times: Vec<f64>,
    types: Vec<VariableType>,
    cutoffs: Vec<Vec<Option<Vec<f64>>>>,
    transforms: Vec<Vec<Option<MonotoneTransform>>>,
}

impl MarginalModel {
    pub fn fit(data: &MixedDataset) -> Self {
        let times = data.pooled_times().to_vec();
        let types = data.types();
        let mut cutoffs = Vec::with_capacity(types.len());
        let mut transforms = Vec::with_capacity(types.len());
        for (j, &vtype) in types.iter().enumerate() {
            let mut cj = Vec::with_capacity(times.len());
            let mut fj = Vec::with_capacity(times.len());
            for ti in 0..times.len() {
                let values: Vec<f64> = data.cell(j, ti).iter().map(|&(_, v)| v).collect();
                let cut = if vtype == VariableType::Continuous || values.is_empty() {
                    None
                } else {
                    estimate_cutoffs(&values, vtype).ok()
                };
                let transform = match vtype {
                    VariableType::Continuous | VariableType::Truncated => {
                        MonotoneTransform::estimate(&values, vtype).ok()
                    }
                    _ => None,
                };
                cj.push(cut);
                fj.push(transform);
            }
            cutoffs.push(cj);
            transforms.push(fj);
        }
        Self {
            times,
            types,
            cutoffs,
            transforms,
        }
    }

    /// Marginal model with known cutoffs and transforms, indexed
    /// `[component][time]` like the fitted one.
    pub fn from_parts(
        times: Vec<f64>,
        types: Vec<VariableType>,
        cutoffs: Vec<Vec<Option<Vec<f64>>>>,
        transforms: Vec<Vec<Option<MonotoneTransform>>>,
    ) -> Result<Self> {
        let shape_ok = |len: usize, rows: &[usize]| len == types.len() && rows.iter().all(|&r| r == times.len());
        let cut_rows: Vec<usize> = cutoffs.iter().map(Vec::len).collect();
        let tr_rows: Vec<usize> = transforms.iter().map(Vec::len).collect();
        if !shape_ok(cutoffs.len(), &cut_rows) || !shape_ok(transforms.len(), &tr_rows) {
            return Err(Error::DimensionMismatch(format!(
                "cutoffs and transforms must be {} components x {} times",
                types.len(),
                times.len()
            )));
        }
        Ok(Self {
            times,
            types,
            cutoffs,
            transforms,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn types(&self) -> &[VariableType] {
        &self.types
    }

    /// Cutoffs of component `j` at pooled time index `ti`; an empty slice for
    /// continuous components.
    pub fn cutoffs(&self, j: usize, ti: usize) -> Option<&[f64]> {
        if self.types[j] == VariableType::Continuous {
            return Some(&[]);
        }
        self.cutoffs[j][ti].as_deref()
    }

    pub fn transform(&self, j: usize, ti: usize) -> Option<&MonotoneTransform> {
        self.transforms[j][ti].as_ref()
    }

    /// Whether the margin of `j` at `ti` can enter a bridge: estimated, and
    /// without a cutoff at ±∞ (an all-zero or all-one margin).
    pub fn is_usable(&self, j: usize, ti: usize) -> bool {
        match self.cutoffs(j, ti) {
            Some(c) => c.iter().all(|v| v.is_finite()),
            None => false,
        }
    }

    /// Pooled time index closest to `t`; ties go to the earlier time.
    pub fn nearest_time_index(&self, t: f64) -> usize {
        nearest_index(&self.times, t)
    }

    /// Probability of each observed level (ordinal and binary) under a latent
    /// normal with mean `mu` and standard deviation `sd`.
    pub fn level_probabilities(cutoffs: &[f64], mu: f64, sd: f64) -> Vec<f64> {
        let mut probs = Vec::with_capacity(cutoffs.len() + 1);
        let mut prev = 0.0;
        for &c in cutoffs {
            let p = if sd > 0.0 {
                std_normal_cdf((c - mu) / sd)
            } else if mu <= c {
                1.0
            } else {
                0.0
            };
            probs.push((p - prev).max(0.0));
            prev = p;
        }
        probs.push((1.0 - prev).max(0.0));
        probs
    }
}

pub(crate) fn nearest_index(sorted: &[f64], t: f64) -> usize {
    let i = sorted.partition_point(|&x| x < t);
    if i == 0 {
        0
    } else if i == sorted.len() {
        sorted.len() - 1
    } else if (t - sorted[i - 1]) <= (sorted[i] - t) {
        i - 1
    } else {
        i
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Component, Observation};
    use approx::assert_abs_diff_eq;

    #[test]
    fn binary_cutoff() {
        let mut v = vec![1.0; 10];
        v[..3].fill(0.0);
        let c = estimate_cutoffs(&v, VariableType::Binary).unwrap();
        assert_abs_diff_eq!(c[0], -0.524_400_512_708_041, epsilon = 1e-9);
        let c = estimate_cutoffs(&[0.0, 0.0], VariableType::Binary).unwrap();
        assert_eq!(c[0], f64::INFINITY);
        assert!(estimate_cutoffs(&[], VariableType::Binary).is_err());
    }

    #[test]
    fn ordinal_cutoffs() {
        let mut v = vec![0.0; 2];
        v.extend([1.0; 5]);
        v.extend([2.0; 3]);
        let c = estimate_cutoffs(&v, VariableType::Ordinal { levels: 3 }).unwrap();
        assert_abs_diff_eq!(c[0], quantile_unchecked(0.2), epsilon = 1e-15);
        assert_abs_diff_eq!(c[1], quantile_unchecked(0.7), epsilon = 1e-15);
    }

    #[test]
    fn observation_maps() {
        assert_eq!(apply_observation_map(0.7, VariableType::Binary, &[0.5]), 1.0);
        assert_eq!(apply_observation_map(0.3, VariableType::Truncated, &[0.5]), 0.0);
        assert_eq!(apply_observation_map(0.8, VariableType::Truncated, &[0.5]), 0.8);
        let ord = VariableType::Ordinal { levels: 4 };
        assert_eq!(apply_observation_map(0.2, ord, &[-0.6, 0.1, 0.6]), 2.0);
        assert_eq!(apply_observation_map(-3.0, ord, &[-0.6, 0.1, 0.6]), 0.0);
        assert_eq!(apply_observation_map(3.0, ord, &[-0.6, 0.1, 0.6]), 3.0);
    }

    #[test]
    fn transform_formula_and_clamping() {
        let f = MonotoneTransform::estimate(&[1.0, 2.0, 3.0], VariableType::Continuous).unwrap();
        assert_abs_diff_eq!(f.apply(2.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.apply(-10.0), quantile_unchecked(0.25), epsilon = 1e-15);
        assert_abs_diff_eq!(f.apply(10.0), quantile_unchecked(0.75), epsilon = 1e-15);
        for &x in &[1.0, 1.5, 2.0, 2.7, 3.0] {
            assert_abs_diff_eq!(f.inverse(f.apply(x)), x, epsilon = 1e-12);
        }
        assert!(MonotoneTransform::estimate(&[4.0, 4.0], VariableType::Continuous).is_err());
    }

    #[test]
    fn truncated_transform_uses_positive_support() {
        let v = [0.0, 0.0, 0.0, 1.0, 2.0];
        let f = MonotoneTransform::estimate(&v, VariableType::Truncated).unwrap();
        assert_eq!(f.knots(), &[1.0, 2.0]);
        assert_abs_diff_eq!(f.apply(1.0), quantile_unchecked(4.0 / 6.0), epsilon = 1e-15);
        assert!(MonotoneTransform::estimate(&[0.0, 0.0, 3.0], VariableType::Truncated).is_err());
    }

    #[test]
    fn model_marks_degenerate_margins() {
        let components = vec![Component {
            name: "b".into(),
            vtype: VariableType::Binary,
        }];
        let obs = vec![
            Observation { subject: 0, component: 0, time: 0.0, value: 0.0 },
            Observation { subject: 1, component: 0, time: 0.0, value: 0.0 },
            Observation { subject: 0, component: 0, time: 1.0, value: 1.0 },
            Observation { subject: 1, component: 0, time: 1.0, value: 0.0 },
        ];
        let data = MixedDataset::new(vec!["a".into(), "b".into()], components, obs).unwrap();
        let m = MarginalModel::fit(&data);
        assert!(!m.is_usable(0, 0));
        assert!(m.is_usable(0, 1));
        assert_eq!(m.nearest_time_index(0.4), 0);
        assert_eq!(m.nearest_time_index(0.6), 1);
    }
}
