//! Pairwise-complete sample Kendall's τ surfaces over pooled time pairs.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MixedDataset;
use crate::error::{Error, Result};

/// Default reliability threshold: cells with at most this many subject pairs
/// are dropped.
pub const DEFAULT_C0: u64 = 10;

/// One retained cell: pooled time indices, τ̂ and its pair count N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauCell {
    pub s: usize,
    pub t: usize,
    pub tau: f64,
    pub n_pairs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSurface {
    pub j: usize,
    pub k: usize,
    pub c0: u64,
    pub times: Vec<f64>,
    pub cells: Vec<TauCell>,
}

impl TauSurface {
    pub fn total_pairs(&self) -> u64 {
        self.cells.iter().map(|c| c.n_pairs).sum()
    }

    /// Writes columns s, t, tau_hat, N with times on the normalized scale.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["s", "t", "tau_hat", "N"])?;
        for c in &self.cells {
            w.write_record([
                self.times[c.s].to_string(),
                self.times[c.t].to_string(),
                c.tau.to_string(),
                c.n_pairs.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// τ̂ surface between components `j` and `k` over all pooled time pairs.
pub fn tau_surface(data: &MixedDataset, j: usize, k: usize, c0: u64) -> Result<TauSurface> {
    let n_comp = data.n_components();
    if j >= n_comp || k >= n_comp {
        return Err(Error::InvalidArgument(format!(
            "component pair ({j}, {k}) out of range for {n_comp} components"
        )));
    }
    let m = data.pooled_times().len();
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|s| (0..m).map(move |t| (s, t)))
        .filter(|&(s, t)| j != k || s <= t)
        .collect();
    let computed: Vec<Option<(u64, i64)>> = pairs
        .par_iter()
        .map(|&(s, t)| {
            let (x, y) = paired_values(data.cell(j, s), data.cell(k, t));
            let n = x.len() as u64;
            let n_pairs = n * n.saturating_sub(1) / 2;
            (n_pairs > c0).then(|| (n_pairs, concordance_difference(&x, &y)))
        })
        .collect();
    let mut cells = Vec::new();
    for (&(s, t), c) in pairs.iter().zip(&computed) {
        if let Some((n_pairs, diff)) = *c {
            let tau = diff as f64 / n_pairs as f64;
            cells.push(TauCell { s, t, tau, n_pairs });
            if j == k && s != t {
                cells.push(TauCell { s: t, t: s, tau, n_pairs });
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::InsufficientData { j, k });
    }
    cells.sort_by_key(|c| (c.s, c.t));
    Ok(TauSurface {
        j,
        k,
        c0,
        times: data.pooled_times().to_vec(),
        cells,
    })
}

/// Values of subjects present in both subject-sorted lists.
fn paired_values(a: &[(usize, f64)], b: &[(usize, f64)]) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(a.len().min(b.len()));
    let mut y = Vec::with_capacity(a.len().min(b.len()));
    let (mut i, mut l) = (0, 0);
    while i < a.len() && l < b.len() {
        match a[i].0.cmp(&b[l].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => l += 1,
            std::cmp::Ordering::Equal => {
                x.push(a[i].1);
                y.push(b[l].1);
                i += 1;
                l += 1;
            }
        }
    }
    (x, y)
}

/// Σ_{i<i'} sgn(x_i − x_i') sgn(y_i − y_i'), i.e. concordant minus discordant
/// pairs with ties contributing zero.
pub fn concordance_difference(x: &[f64], y: &[f64]) -> i64 {
    assert_eq!(x.len(), y.len());
    if x.len() <= 48 {
        brute_force(x, y)
    } else {
        knight(x, y)
    }
}

fn sgn(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn brute_force(x: &[f64], y: &[f64]) -> i64 {
    let mut s = 0;
    for i in 0..x.len() {
        for l in (i + 1)..x.len() {
            s += sgn(x[i] - x[l]) * sgn(y[i] - y[l]);
        }
    }
    s
}

/// Knight's O(n log n) count: sort by (x, y), then count inversions in y by
/// merge sort, correcting for ties in x, in y and in both.
fn knight(x: &[f64], y: &[f64]) -> i64 {
    let n = x.len();
    let mut pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let tie_pairs = |run: u64| run * run.saturating_sub(1) / 2;
    let (mut x_ties, mut joint_ties) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in pts.windows(2) {
        if w[0].0 == w[1].0 {
            run_x += 1;
            if w[0].1 == w[1].1 {
                run_xy += 1;
            } else {
                joint_ties += tie_pairs(run_xy);
                run_xy = 1;
            }
        } else {
            x_ties += tie_pairs(run_x);
            joint_ties += tie_pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    x_ties += tie_pairs(run_x);
    joint_ties += tie_pairs(run_xy);

    let mut ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let discordant = merge_count(&mut ys, &mut buf);

    let mut y_ties = 0u64;
    let mut run_y = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            y_ties += tie_pairs(run_y);
            run_y = 1;
        }
    }
    y_ties += tie_pairs(run_y);

    let total = tie_pairs(n as u64);
    total as i64 - x_ties as i64 - y_ties as i64 + joint_ties as i64 - 2 * discordant as i64
}

/// Stable merge sort returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (left, right) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(left, bl) + merge_count(right, br)
    };
    let (mut i, mut r, mut o) = (0, mid, 0);
    while i < mid && r < n {
        if v[r] < v[i] {
            buf[o] = v[r];
            count += (mid - i) as u64;
            r += 1;
        } else {
            buf[o] = v[i];
            i += 1;
        }
        o += 1;
    }
    while i < mid {
        buf[o] = v[i];
        i += 1;
        o += 1;
    }
    while r < n {
        buf[o] = v[r];
        r += 1;
        o += 1;
    }
    v.copy_from_slice(&buf[..n]);
    count
}
