//! Kendall's τ bridging functions between a latent Gaussian correlation and the
//! population τ of the observed mixed-type pair, plus their inversion.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::VariableType;
use crate::error::{Error, Result};
use crate::mvn::{bvn_cdf_unchecked, std_normal_cdf, CorrelationMatrix, MvnIntegrator};

/// Distance from ±1 of the inversion bracket.
pub const INVERSION_DELTA: f64 = 1e-6;
/// Target accuracy of the inversion in τ-space.
pub const INVERSION_TOL: f64 = 1e-8;

// =============================================================================
// Pair kinds
// =============================================================================

/// The ten bridging forms. Argument order is canonical: `Cb` is
/// (continuous, binary), `Tb` (truncated, binary), `Ct` (continuous,
/// truncated), `Co` (continuous, ordinal), `Ob` (ordinal, binary) and `To`
/// (truncated, ordinal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeForm {
    Cc,
    Bb,
    Cb,
    Tb,
    Ct,
    Tt,
    Co,
    Oo,
    Ob,
    To,
}

impl BridgeForm {
    pub const ALL: [BridgeForm; 10] = [
        BridgeForm::Cc,
        BridgeForm::Bb,
        BridgeForm::Cb,
        BridgeForm::Tb,
        BridgeForm::Ct,
        BridgeForm::Tt,
        BridgeForm::Co,
        BridgeForm::Oo,
        BridgeForm::Ob,
        BridgeForm::To,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BridgeForm::Cc => "cc",
            BridgeForm::Bb => "bb",
            BridgeForm::Cb => "cb",
            BridgeForm::Tb => "tb",
            BridgeForm::Ct => "ct",
            BridgeForm::Tt => "tt",
            BridgeForm::Co => "co",
            BridgeForm::Oo => "oo",
            BridgeForm::Ob => "ob",
            BridgeForm::To => "to",
        }
    }
}

impl fmt::Display for BridgeForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An ordered pair of variable types reduced to its bridging form; `swapped`
/// records that the pair arrived in the opposite of the canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairKind {
    pub form: BridgeForm,
    pub swapped: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Letter {
    C,
    T,
    O,
    B,
}

fn letter(t: VariableType) -> Letter {
    match t {
        VariableType::Continuous => Letter::C,
        VariableType::Truncated => Letter::T,
        VariableType::Ordinal { .. } => Letter::O,
        VariableType::Binary => Letter::B,
    }
}

impl PairKind {
    pub fn new(tj: VariableType, tk: VariableType) -> Self {
        use Letter::*;
        let (form, swapped) = match (letter(tj), letter(tk)) {
            (C, C) => (BridgeForm::Cc, false),
            (B, B) => (BridgeForm::Bb, false),
            (T, T) => (BridgeForm::Tt, false),
            (O, O) => (BridgeForm::Oo, false),
            (C, B) => (BridgeForm::Cb, false),
            (B, C) => (BridgeForm::Cb, true),
            (T, B) => (BridgeForm::Tb, false),
            (B, T) => (BridgeForm::Tb, true),
            (C, T) => (BridgeForm::Ct, false),
            (T, C) => (BridgeForm::Ct, true),
            (C, O) => (BridgeForm::Co, false),
            (O, C) => (BridgeForm::Co, true),
            (O, B) => (BridgeForm::Ob, false),
            (B, O) => (BridgeForm::Ob, true),
            (T, O) => (BridgeForm::To, false),
            (O, T) => (BridgeForm::To, true),
        };
        PairKind { form, swapped }
    }

    /// Number of thresholds expected in each canonical slot; `None` means
    /// "one or more" (ordinal).
    fn expected_lengths(self) -> (Option<usize>, Option<usize>) {
        match self.form {
            BridgeForm::Cc => (Some(0), Some(0)),
            BridgeForm::Bb | BridgeForm::Tb | BridgeForm::Tt => (Some(1), Some(1)),
            BridgeForm::Cb | BridgeForm::Ct => (Some(0), Some(1)),
            BridgeForm::Co => (Some(0), None),
            BridgeForm::Oo => (None, None),
            BridgeForm::Ob => (None, Some(1)),
            BridgeForm::To => (Some(1), None),
        }
    }

    /// Reorders `(cut_j, cut_k)` into canonical slots and validates them.
    fn canonical<'a>(self, cut_j: &'a [f64], cut_k: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        let (a, b) = if self.swapped {
            (cut_k, cut_j)
        } else {
            (cut_j, cut_k)
        };
        let (la, lb) = self.expected_lengths();
        for (cut, want) in [(a, la), (b, lb)] {
            let ok = match want {
                Some(n) => cut.len() == n,
                None => !cut.is_empty(),
            };
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "cutoff vector of length {} does not match pair kind {}",
                    cut.len(),
                    self.form
                )));
            }
            if cut.iter().any(|c| c.is_nan()) || cut.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "cutoffs must be nondecreasing and non-NaN, got {cut:?}"
                )));
            }
        }
        Ok((a, b))
    }
}

/// Thresholds of one component at one time point. Continuous components carry
/// none, binary and truncated one, ordinal `levels − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffVector {
    pub component: usize,
    pub time: f64,
    pub thresholds: Vec<f64>,
}

// =============================================================================
// Special correlation matrices
// =============================================================================

/// Named structured correlation matrices appearing in the bridging forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpecialKind {
    S3a,
    S3b,
    S3,
    S4a,
    S4b,
    S5,
}

impl FromStr for SpecialKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S3a" => Ok(SpecialKind::S3a),
            "S3b" => Ok(SpecialKind::S3b),
            "S3" => Ok(SpecialKind::S3),
            "S4a" => Ok(SpecialKind::S4a),
            "S4b" => Ok(SpecialKind::S4b),
            "S5" => Ok(SpecialKind::S5),
            other => Err(Error::InvalidArgument(format!(
                "unknown special correlation kind {other:?}"
            ))),
        }
    }
}

pub fn special_corr(kind: SpecialKind, rho: f64) -> Result<CorrelationMatrix> {
    check_rho(rho)?;
    let s = FRAC_1_SQRT_2;
    let r = rho;
    let rs = rho * s;
    let rows: Vec<Vec<f64>> = match kind {
        SpecialKind::S3a => vec![vec![1.0, 0.0, rs], vec![0.0, 1.0, s], vec![rs, s, 1.0]],
        SpecialKind::S3b => vec![vec![1.0, 0.0, -s], vec![0.0, 1.0, -rs], vec![-s, -rs, 1.0]],
        SpecialKind::S3 => vec![vec![1.0, -r, -rs], vec![-r, 1.0, s], vec![-rs, s, 1.0]],
        SpecialKind::S4a => vec![
            vec![1.0, 0.0, s, -rs],
            vec![0.0, 1.0, -rs, s],
            vec![s, -rs, 1.0, -r],
            vec![-rs, s, -r, 1.0],
        ],
        SpecialKind::S4b => vec![
            vec![1.0, r, s, rs],
            vec![r, 1.0, rs, s],
            vec![s, rs, 1.0, r],
            vec![rs, s, r, 1.0],
        ],
        SpecialKind::S5 => vec![
            vec![1.0, 0.0, 0.0, rs],
            vec![0.0, 1.0, -r, -rs],
            vec![0.0, -r, 1.0, s],
            vec![rs, -rs, s, 1.0],
        ],
    };
    corr_from(rows)
}

fn corr_from(rows: Vec<Vec<f64>>) -> Result<CorrelationMatrix> {
    let d = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    CorrelationMatrix::new(DMatrix::from_row_slice(d, d, &flat))
}

/// Matrices of the truncated–binary form: (−Z_j, Z_k, ·) with a Gaussian
/// difference coordinate.
fn tb_pair(rho: f64) -> Result<(CorrelationMatrix, CorrelationMatrix)> {
    let s = FRAC_1_SQRT_2;
    let rs = rho * s;
    let a = corr_from(vec![vec![1.0, -rho, s], vec![-rho, 1.0, -rs], vec![s, -rs, 1.0]])?;
    let b = corr_from(vec![vec![1.0, 0.0, -s], vec![0.0, 1.0, -rs], vec![-s, -rs, 1.0]])?;
    Ok((a, b))
}

/// Matrix of the continuous–truncated form.
fn ct_matrix(rho: f64) -> Result<CorrelationMatrix> {
    let s = FRAC_1_SQRT_2;
    let rs = rho * s;
    corr_from(vec![vec![1.0, s, rs], vec![s, 1.0, rho], vec![rs, rho, 1.0]])
}

/// Matrix of the continuous–ordinal form.
fn co_matrix(rho: f64) -> Result<CorrelationMatrix> {
    let rs = rho * FRAC_1_SQRT_2;
    corr_from(vec![vec![1.0, 0.0, rs], vec![0.0, 1.0, rs], vec![rs, rs, 1.0]])
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "correlation must lie in [-1, 1], got {rho}"
        )));
    }
    Ok(())
}

// =============================================================================
// Forward evaluation
// =============================================================================

/// Evaluates bridges with a fixed orthant-probability integrator.
#[derive(Debug, Clone)]
pub struct Bridge {
    integrator: MvnIntegrator,
}

impl Bridge {
    pub const DEFAULT_POINTS: usize = 2039;
    pub const DEFAULT_SHIFTS: usize = 8;
    pub const DEFAULT_SEED: u64 = 0x6272_6964_6765;

    pub fn new(integrator: MvnIntegrator) -> Self {
        Self { integrator }
    }

    /// Population τ of the observed pair whose latent correlation is `rho`.
    pub fn forward(&self, rho: f64, kind: PairKind, cut_j: &[f64], cut_k: &[f64]) -> Result<f64> {
        check_rho(rho)?;
        let (a, b) = kind.canonical(cut_j, cut_k)?;
        self.forward_canonical(rho, kind.form, a, b)
    }

    fn phi3(&self, upper: [f64; 3], corr: &CorrelationMatrix) -> Result<f64> {
        Ok(self.integrator.cdf(&upper, corr)?.value)
    }

    fn phi4(&self, upper: [f64; 4], corr: &CorrelationMatrix) -> Result<f64> {
        Ok(self.integrator.cdf(&upper, corr)?.value)
    }

    fn forward_canonical(&self, rho: f64, form: BridgeForm, a: &[f64], b: &[f64]) -> Result<f64> {
        let p = std_normal_cdf;
        let p2 = bvn_cdf_unchecked;
        let s = FRAC_1_SQRT_2;
        let tau = match form {
            BridgeForm::Cc => 2.0 / PI * rho.asin(),
            BridgeForm::Bb => 2.0 * (p2(a[0], b[0], rho) - p(a[0]) * p(b[0])),
            BridgeForm::Cb => 4.0 * p2(b[0], 0.0, rho * s) - 2.0 * p(b[0]),
            BridgeForm::Tb => {
                let (dj, dk) = (a[0], b[0]);
                let (ma, mb) = tb_pair(rho)?;
                2.0 * (1.0 - p(dj)) * p(dk)
                    - 2.0 * self.phi3([-dj, dk, 0.0], &ma)?
                    - 2.0 * self.phi3([-dj, dk, 0.0], &mb)?
            }
            BridgeForm::Ct => {
                let dj = b[0];
                -2.0 * p2(-dj, 0.0, s) + 4.0 * self.phi3([-dj, 0.0, 0.0], &ct_matrix(rho)?)?
            }
            BridgeForm::Tt => {
                let (dj, dk) = (a[0], b[0]);
                let upper = [-dj, -dk, 0.0, 0.0];
                -2.0 * self.phi4(upper, &special_corr(SpecialKind::S4a, rho)?)?
                    + 2.0 * self.phi4(upper, &special_corr(SpecialKind::S4b, rho)?)?
            }
            BridgeForm::Co => {
                let d = extended(b);
                let l = d.len() - 1;
                let m = co_matrix(rho)?;
                let mut acc_a = 0.0;
                let mut acc_b = 0.0;
                for q in 1..l {
                    acc_a += self.phi3([d[q], -d[q], 0.0], &m)?
                        - self.phi3([d[q - 1], -d[q], 0.0], &m)?;
                    acc_b += (p(d[q]) - p(d[q - 1])) * (1.0 - p(d[q]));
                }
                2.0 * (2.0 * acc_a - acc_b)
            }
            BridgeForm::Oo => {
                let dj = extended(a);
                let dk = extended(b);
                let (lj, lk) = (dj.len() - 1, dk.len() - 1);
                let mut t = 0.0;
                for r in 1..lj {
                    for q in 1..lk {
                        t += p2(dj[r], dk[q], rho)
                            * (p2(dj[r + 1], dk[q + 1], rho) - p2(dj[r + 1], dk[q - 1], rho));
                    }
                }
                let mut t2 = 0.0;
                for r in 1..lj {
                    t2 += p(dj[r]) * p2(dj[r + 1], dk[lk - 1], rho);
                }
                2.0 * t - 2.0 * t2
            }
            BridgeForm::Ob => {
                let dj = extended(a);
                let dk = b[0];
                let lj = dj.len() - 1;
                let mut t = 0.0;
                for r in 1..lj {
                    t += p2(dj[r], dk, rho) * p(dj[r + 1]) - p(dj[r]) * p2(dj[r + 1], dk, rho);
                }
                2.0 * t
            }
            BridgeForm::To => {
                let dj = a[0];
                let dk = extended(b);
                let lk = dk.len() - 1;
                let s5 = special_corr(SpecialKind::S5, rho)?;
                let mut t =
                    2.0 * self.phi3([dk[lk - 1], -dj, 0.0], &special_corr(SpecialKind::S3a, rho)?)?;
                for r in 1..lk {
                    t -= 2.0
                        * (self.phi4([dk[r + 1], dk[r], -dj, 0.0], &s5)?
                            - self.phi4([dk[r - 1], dk[r], -dj, 0.0], &s5)?);
                }
                t
            }
        };
        Ok(tau.clamp(-1.0, 1.0))
    }

    /// Latent correlation whose bridged τ equals `tau`; values outside the
    /// attainable range are clamped to its endpoints first.
    pub fn inverse(&self, tau: f64, kind: PairKind, cut_j: &[f64], cut_k: &[f64]) -> Result<f64> {
        if tau.is_nan() {
            return Err(Error::InvalidArgument("tau is NaN".into()));
        }
        let (a, b) = kind.canonical(cut_j, cut_k)?;
        if kind.form == BridgeForm::Cc {
            return Ok((tau.clamp(-1.0, 1.0) * FRAC_PI_2).sin().clamp(
                -1.0 + INVERSION_DELTA,
                1.0 - INVERSION_DELTA,
            ));
        }
        let f = |r: f64| self.forward_canonical(r, kind.form, a, b);
        invert_monotone(tau, f, kind.form)
    }
}

impl Default for Bridge {
    fn default() -> Self {
        Self::new(MvnIntegrator::new(
            Self::DEFAULT_POINTS,
            Self::DEFAULT_SHIFTS,
            Self::DEFAULT_SEED,
        ))
    }
}

fn extended(cut: &[f64]) -> Vec<f64> {
    let mut d = Vec::with_capacity(cut.len() + 2);
    d.push(f64::NEG_INFINITY);
    d.extend_from_slice(cut);
    d.push(f64::INFINITY);
    d
}

fn default_bridge() -> &'static Bridge {
    static BRIDGE: OnceLock<Bridge> = OnceLock::new();
    BRIDGE.get_or_init(Bridge::default)
}

/// Population τ for latent correlation `rho` under the default integrator.
pub fn bridge_forward(rho: f64, kind: PairKind, cut_j: &[f64], cut_k: &[f64]) -> Result<f64> {
    default_bridge().forward(rho, kind, cut_j, cut_k)
}

/// Inverse of [`bridge_forward`] on [−1 + δ, 1 − δ].
pub fn bridge_inverse(tau: f64, kind: PairKind, cut_j: &[f64], cut_k: &[f64]) -> Result<f64> {
    default_bridge().inverse(tau, kind, cut_j, cut_k)
}

/// Illinois-modified regula falsi on a bracket, falling back to bisection
/// whenever the secant step stalls.
fn invert_monotone(tau: f64, f: impl Fn(f64) -> Result<f64>, form: BridgeForm) -> Result<f64> {
    let mut lo = -1.0 + INVERSION_DELTA;
    let mut hi = 1.0 - INVERSION_DELTA;
    let f_lo0 = f(lo)?;
    let f_hi0 = f(hi)?;
    if f_hi0 - f_lo0 < 1e-12 {
        return Err(Error::Unidentifiable(format!(
            "bridge {form} is flat over the correlation range (tau in [{f_lo0}, {f_hi0}])"
        )));
    }
    let target = tau.clamp(f_lo0, f_hi0);
    let mut g_lo = f_lo0 - target;
    let mut g_hi = f_hi0 - target;
    if g_lo.abs() <= INVERSION_TOL {
        return Ok(lo);
    }
    if g_hi.abs() <= INVERSION_TOL {
        return Ok(hi);
    }
    let mut side = 0i8;
    for it in 0..200 {
        let secant = (lo * g_hi - hi * g_lo) / (g_hi - g_lo);
        let x = if it % 4 == 3 || !(secant > lo && secant < hi) {
            0.5 * (lo + hi)
        } else {
            secant
        };
        let fx = f(x)?;
        if fx < f_lo0 - 1e-9 || fx > f_hi0 + 1e-9 {
            return Err(Error::NonMonotoneBridge(format!(
                "bridge {form}: F({x}) = {fx} lies outside [F(lo), F(hi)] = [{f_lo0}, {f_hi0}]"
            )));
        }
        let g = fx - target;
        if g.abs() <= INVERSION_TOL || hi - lo < 1e-15 {
            return Ok(x);
        }
        if g < 0.0 {
            lo = x;
            g_lo = g;
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            g_hi = g;
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::NonMonotoneBridge(format!(
        "bridge {form}: inversion did not converge for tau = {tau}"
    )))
}

// =============================================================================
// Interpolation tables for fitting
// =============================================================================

/// Chebyshev interpolant of θ ↦ F(sin θ) on [−π/2, π/2] for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeTable {
    form: BridgeForm,
    coeffs: Vec<f64>,
}

impl BridgeTable {
    pub const DEFAULT_NODES: usize = 24;

    pub fn build(
        bridge: &Bridge,
        kind: PairKind,
        cut_j: &[f64],
        cut_k: &[f64],
        nodes: usize,
    ) -> Result<Self> {
        let (a, b) = kind.canonical(cut_j, cut_k)?;
        if kind.form == BridgeForm::Cc {
            return Ok(Self {
                form: BridgeForm::Cc,
                coeffs: Vec::new(),
            });
        }
        let n = nodes.max(4);
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let x = ((2 * i + 1) as f64 * PI / (2 * n) as f64).cos();
            let theta = x * FRAC_PI_2;
            values.push(bridge.forward_canonical(theta.sin(), kind.form, a, b)?);
        }
        let mut coeffs = vec![0.0; n];
        for (c, coeff) in coeffs.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, v) in values.iter().enumerate() {
                acc += v * (c as f64 * (2 * i + 1) as f64 * PI / (2 * n) as f64).cos();
            }
            *coeff = 2.0 * acc / n as f64;
        }
        coeffs[0] *= 0.5;
        Ok(Self {
            form: kind.form,
            coeffs,
        })
    }

    pub fn form(&self) -> BridgeForm {
        self.form
    }

    /// Returns (F(ρ), dF/dθ) at θ = asin ρ.
    pub fn eval_theta(&self, theta: f64) -> (f64, f64) {
        if self.form == BridgeForm::Cc {
            return (2.0 / PI * theta, 2.0 / PI);
        }
        let x = (theta / FRAC_PI_2).clamp(-1.0, 1.0);
        // Clenshaw for the value and for the derivative series
        let n = self.coeffs.len();
        let (mut b1, mut b2) = (0.0, 0.0);
        let (mut d1, mut d2) = (0.0, 0.0);
        for k in (1..n).rev() {
            let b0 = 2.0 * x * b1 - b2 + self.coeffs[k];
            let d0 = 2.0 * x * d1 - d2 + 2.0 * b1;
            b2 = b1;
            b1 = b0;
            d2 = d1;
            d1 = d0;
        }
        let value = x * b1 - b2 + self.coeffs[0];
        let deriv = x * d1 - d2 + b1;
        (value, deriv / FRAC_PI_2)
    }

    /// F at correlation ρ.
    pub fn eval(&self, rho: f64) -> f64 {
        self.eval_theta(rho.clamp(-1.0, 1.0).asin()).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ord(levels: u32) -> VariableType {
        VariableType::Ordinal { levels }
    }

    #[test]
    fn canonicalization_table() {
        use VariableType::*;
        assert_eq!(PairKind::new(Binary, Continuous).form, BridgeForm::Cb);
        assert!(PairKind::new(Binary, Continuous).swapped);
        assert_eq!(PairKind::new(ord(3), Truncated).form, BridgeForm::To);
        assert!(PairKind::new(ord(3), Truncated).swapped);
        assert!(!PairKind::new(Truncated, Truncated).swapped);
    }

    #[test]
    fn closed_forms() {
        let cc = PairKind::new(VariableType::Continuous, VariableType::Continuous);
        assert_abs_diff_eq!(bridge_forward(0.5, cc, &[], &[]).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bridge_inverse(1.0 / 3.0, cc, &[], &[]).unwrap(), 0.5, epsilon = 1e-12);
        let bb = PairKind::new(VariableType::Binary, VariableType::Binary);
        for &r in &[-0.7, 0.2, 0.9] {
            let want = f64::asin(r) / PI;
            assert_abs_diff_eq!(bridge_forward(r, bb, &[0.0], &[0.0]).unwrap(), want, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(bridge_forward(1.0, bb, &[0.0], &[0.0]).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn independence_gives_zero() {
        use VariableType::*;
        let cases: [(VariableType, VariableType, Vec<f64>, Vec<f64>); 6] = [
            (Truncated, Binary, vec![0.3], vec![-0.4]),
            (Continuous, Truncated, vec![], vec![0.5]),
            (Truncated, Truncated, vec![0.2], vec![-0.1]),
            (Continuous, ord(4), vec![], vec![-0.6, 0.1, 0.6]),
            (Truncated, ord(3), vec![0.5], vec![-0.3, 0.4]),
            (ord(3), Binary, vec![-0.5, 0.5], vec![0.2]),
        ];
        for (tj, tk, cj, ck) in cases {
            let kind = PairKind::new(tj, tk);
            let tau = bridge_forward(0.0, kind, &cj, &ck).unwrap();
            assert_abs_diff_eq!(tau, 0.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn swapped_arguments_agree() {
        let a = PairKind::new(VariableType::Truncated, ord(3));
        let b = PairKind::new(ord(3), VariableType::Truncated);
        let x = bridge_forward(0.4, a, &[0.2], &[-0.5, 0.3]).unwrap();
        let y = bridge_forward(0.4, b, &[-0.5, 0.3], &[0.2]).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn ordinal_binary_reduces_to_binary_binary() {
        let ob = PairKind::new(ord(2), VariableType::Binary);
        let bb = PairKind::new(VariableType::Binary, VariableType::Binary);
        for &r in &[-0.8, -0.1, 0.35, 0.95] {
            let x = bridge_forward(r, ob, &[0.3], &[-0.7]).unwrap();
            let y = bridge_forward(r, bb, &[0.3], &[-0.7]).unwrap();
            assert_abs_diff_eq!(x, y, epsilon = 1e-8);
        }
    }

    #[test]
    fn cutoff_mismatch_is_rejected() {
        let kind = PairKind::new(VariableType::Binary, VariableType::Continuous);
        assert!(bridge_forward(0.1, kind, &[], &[0.2]).is_err());
        let kind = PairKind::new(ord(3), VariableType::Binary);
        assert!(bridge_forward(0.1, kind, &[0.4, -0.2], &[0.0]).is_err());
    }

    #[test]
    fn special_matrices() {
        let s = FRAC_1_SQRT_2;
        let m = special_corr(SpecialKind::S3a, 0.0).unwrap();
        assert_eq!((m.get(0, 1), m.get(0, 2), m.get(1, 2)), (0.0, 0.0, s));
        let m = special_corr(SpecialKind::S4b, 1.0).unwrap();
        assert_eq!((m.get(0, 1), m.get(0, 2), m.get(0, 3)), (1.0, s, s));
        let m = special_corr(SpecialKind::S5, 0.5).unwrap();
        assert_eq!(m.get(1, 2), -0.5);
        assert!("S6".parse::<SpecialKind>().is_err());
        assert!(special_corr(SpecialKind::S3, 1.5).is_err());
    }

    #[test]
    fn inversion_round_trip() {
        let kind = PairKind::new(VariableType::Truncated, VariableType::Binary);
        for &r in &[-0.85, -0.3, 0.0, 0.45, 0.9] {
            let tau = bridge_forward(r, kind, &[0.4], &[-0.2]).unwrap();
            let back = bridge_inverse(tau, kind, &[0.4], &[-0.2]).unwrap();
            assert_abs_diff_eq!(back, r, epsilon = 1e-6);
        }
    }

    #[test]
    fn inversion_clamps() {
        let kind = PairKind::new(VariableType::Binary, VariableType::Binary);
        let r = bridge_inverse(0.9, kind, &[0.0], &[0.0]).unwrap();
        assert_abs_diff_eq!(r, 1.0 - INVERSION_DELTA, epsilon = 1e-9);
    }

    #[test]
    fn table_matches_direct_evaluation() {
        let bridge = Bridge::default();
        let kind = PairKind::new(VariableType::Truncated, VariableType::Binary);
        let table = BridgeTable::build(&bridge, kind, &[0.4], &[-0.2], BridgeTable::DEFAULT_NODES).unwrap();
        for &r in &[-0.97, -0.5, 0.0, 0.33, 0.8, 0.99] {
            let direct = bridge.forward(r, kind, &[0.4], &[-0.2]).unwrap();
            assert_abs_diff_eq!(table.eval(r), direct, epsilon = 1e-4);
        }
        // derivative against a central difference of the interpolant
        let h = 1e-6;
        let (_, d) = table.eval_theta(0.3);
        let fd = (table.eval_theta(0.3 + h).0 - table.eval_theta(0.3 - h).0) / (2.0 * h);
        assert_abs_diff_eq!(d, fd, epsilon = 1e-6);
    }
}
