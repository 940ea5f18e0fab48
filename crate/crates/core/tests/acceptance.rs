//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary (no libtest harness) so the report is always printed; exits
//! non-zero when any criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mixfpca::bridge::{bridge_forward, bridge_inverse, BridgeForm, PairKind};
use mixfpca::covfit::{assemble_and_project, LatentCorrelationModel, SplineSurface};
use mixfpca::data::{regular_grid, Component, MixedDataset, Observation, VariableType};
use mixfpca::fpca::{mfpca_full, trapezoid_weights, weighted_eigen};
use mixfpca::latent::{predict_latent, GibbsOptions, LatentPrediction, PredictionMethod};
use mixfpca::marginals::{MarginalModel, MonotoneTransform};
use mixfpca::mvn::{bvn_cdf, mvn_cdf, CorrelationMatrix};
use mixfpca::pipeline::{fit, FitConfig, Method};
use mixfpca::sim::{benchmark, ise, replication_seed, simulate, BenchMethod, Scenario, SimulationConfig};

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("stationary benchmark", c1_stationary),
        ("nonstationary benchmark", c2_nonstationary),
        ("bridges vs Monte Carlo tau", c3_bridge_oracle),
        ("bridge inversion round trip", c4_inversion),
        ("normal orthant probabilities", c5_mvn),
        ("BLUP vs Gaussian conditioning", c6_blup),
        ("PD projection floor", c7_projection),
        ("FPCA invariants", c8_fpca),
        ("ps vs full eigenfunctions", c9_ps_diagnostic),
        ("determinism", c10_determinism),
    ];
    let filter: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("criterion {id:>2} {status}: {name}: {} [{:.0}s]", o.detail, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// =============================================================================
// 1, 2: Monte Carlo benchmarks
// =============================================================================

fn bench_config(scenario: Scenario) -> SimulationConfig {
    let mut config = SimulationConfig::new(scenario, 4, 100);
    config.m = 16;
    config.seed = SEED;
    config.replications = 20;
    config
}

fn means(scenario: Scenario) -> (SimulationConfig, [f64; 3], String) {
    let config = bench_config(scenario);
    let report = benchmark(&config, &BenchMethod::ALL, &FitConfig::default()).expect("benchmark runs");
    let mut out = [f64::NAN; 3];
    let mut text = Vec::new();
    for (slot, method) in out.iter_mut().zip(BenchMethod::ALL) {
        let row = report.row(method).expect("row per method");
        *slot = row.mean_ise;
        text.push(format!("{method} {:.5} ({:.5}, {} failed)", row.mean_ise, row.sd_ise, row.n_fail));
    }
    (config, out, text.join(", "))
}

fn c1_stationary() -> Outcome {
    let (_, [m2, _, naive], text) = means(Scenario::Stationary);
    let ratio = naive / m2;
    outcome(
        (0.005..=0.025).contains(&m2) && ratio >= 2.0,
        format!("{text}; naive/m2fpca = {ratio:.2} (need m2fpca in [0.005, 0.025], ratio >= 2)"),
    )
}

/// ISE of the plain Pearson correlation of n fully observed latent vectors
/// drawn from the truth: a floor no estimator working from n subjects beats
/// by much.
fn pearson_floor(config: &SimulationConfig) -> f64 {
    let mut total = 0.0;
    for r in 0..config.replications {
        let sim = simulate(config, replication_seed(config.seed, r)).expect("simulate");
        let d = sim.truth.nrows();
        // the nonstationary truth is numerically singular; use a clipped
        // symmetric square root instead of a Cholesky factor
        let eig = sim.truth.clone().symmetric_eigen();
        let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
        let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(config.seed ^ 0x0f, r));
        let n = config.n;
        let mut x = DMatrix::zeros(n, d);
        for i in 0..n {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            x.set_row(i, &(&root * z).transpose());
        }
        let mean = x.row_mean();
        for i in 0..n {
            for c in 0..d {
                x[(i, c)] -= mean[c];
            }
        }
        let cov = x.transpose() * &x;
        let sd: Vec<f64> = (0..d).map(|c| cov[(c, c)].sqrt()).collect();
        let corr = DMatrix::from_fn(d, d, |a, b| cov[(a, b)] / (sd[a] * sd[b]));
        total += ise(&sim.truth, &corr, &sim.grid).expect("ise").total;
    }
    total / config.replications as f64
}

fn c2_nonstationary() -> Outcome {
    let floor = pearson_floor(&bench_config(Scenario::Nonstationary));
    let (config, [m2, ps, naive], text) = means(Scenario::Nonstationary);
    let close = (m2 - ps).abs() <= 0.5 * m2.max(ps);
    let bound = naive / 5.0;
    outcome(
        close && m2 <= bound && ps <= bound,
        format!(
            "{text}; |m2 - ps| <= 0.5 max: {close}; bound naive/5 = {bound:.5}; \
             oracle floor (Pearson on complete latent data, n = {}) = {floor:.5}",
            config.n
        ),
    )
}

// =============================================================================
// 3, 4: bridges
// =============================================================================

fn form_types(form: BridgeForm, rng: &mut impl Rng) -> (VariableType, VariableType) {
    use VariableType::*;
    let ord = |rng: &mut dyn rand::RngCore| Ordinal { levels: rng.random_range(3..=4) };
    match form {
        BridgeForm::Cc => (Continuous, Continuous),
        BridgeForm::Bb => (Binary, Binary),
        BridgeForm::Cb => (Continuous, Binary),
        BridgeForm::Tb => (Truncated, Binary),
        BridgeForm::Ct => (Continuous, Truncated),
        BridgeForm::Tt => (Truncated, Truncated),
        BridgeForm::Co => (Continuous, ord(rng)),
        BridgeForm::Oo => (ord(rng), ord(rng)),
        BridgeForm::Ob => (ord(rng), Binary),
        BridgeForm::To => (Truncated, ord(rng)),
    }
}

fn random_cutoffs(vtype: VariableType, rng: &mut impl Rng) -> Vec<f64> {
    let mut c: Vec<f64> = (0..vtype.n_cutoffs()).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.sort_by(f64::total_cmp);
    c
}

/// Monotone observation map; truncated values above the cutoff go through
/// exp so the map stays increasing for negative cutoffs.
fn observe(z: f64, vtype: VariableType, cut: &[f64]) -> f64 {
    match vtype {
        VariableType::Continuous => z,
        VariableType::Truncated => {
            if z > cut[0] {
                z.exp()
            } else {
                0.0
            }
        }
        VariableType::Binary => (z > cut[0]) as u8 as f64,
        VariableType::Ordinal { .. } => cut.iter().filter(|&&c| z > c).count() as f64,
    }
}

/// Population τ by Monte Carlo: `draws` latent pairs, compared in disjoint
/// couples. Returns (estimate, standard error).
fn mc_tau(rho: f64, types: (VariableType, VariableType), cuts: (&[f64], &[f64]), draws: usize, rng: &mut impl Rng) -> (f64, f64) {
    let s = (1.0 - rho * rho).sqrt();
    let mut draw = || {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        (observe(a, types.0, cuts.0), observe(rho * a + s * b, types.1, cuts.1))
    };
    let pairs = draws / 2;
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..pairs {
        let (x1, y1) = draw();
        let (x2, y2) = draw();
        let v = ((x1 - x2).signum() * (y1 - y2).signum()) * ((x1 != x2 && y1 != y2) as u8 as f64);
        sum += v;
        sum2 += v * v;
    }
    let mean = sum / pairs as f64;
    let var = (sum2 / pairs as f64 - mean * mean).max(0.0);
    (mean, (var / pairs as f64).sqrt())
}

fn c3_bridge_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 3);
    let mut worst = (0.0_f64, String::new());
    let mut misses = Vec::new();
    let mut rechecks = Vec::new();
    for form in BridgeForm::ALL {
        let mut form_misses = 0;
        for _ in 0..25 {
            let types = form_types(form, &mut rng);
            let (cj, ck) = (random_cutoffs(types.0, &mut rng), random_cutoffs(types.1, &mut rng));
            let rho = rng.random_range(-0.9..0.9);
            let kind = PairKind::new(types.0, types.1);
            let bridged = bridge_forward(rho, kind, &cj, &ck).expect("bridge evaluates");
            let (tau, se) = mc_tau(rho, types, (&cj, &ck), 1_000_000, &mut rng);
            let z = (bridged - tau).abs() / se.max(1e-12);
            if z > worst.0 {
                worst = (z, format!("{form} rho {rho:.3}: bridge {bridged:.5} vs MC {tau:.5} (se {se:.5})"));
            }
            if z > 3.0 {
                form_misses += 1;
                // independent re-check with 50x the draws; reported only,
                // the criterion itself is judged on the 10^6-draw oracle
                let mut again = ChaCha8Rng::seed_from_u64(SEED ^ 0x33);
                let (t2, s2) = mc_tau(rho, types, (&cj, &ck), 50_000_000, &mut again);
                rechecks.push(format!("{form} rho {rho:.3}: |z| = {:.2} at 5e7 draws", (bridged - t2).abs() / s2));
            }
        }
        if form_misses > 0 {
            misses.push(format!("{form}: {form_misses}"));
        }
    }
    let mut detail = format!(
        "250 settings, outside 3 SE: {}; largest |z| {:.2} at {}",
        if misses.is_empty() { "none".to_string() } else { misses.join(", ") },
        worst.0,
        worst.1
    );
    if !rechecks.is_empty() {
        detail.push_str(&format!("; re-check: {}", rechecks.join(", ")));
    }
    outcome(misses.is_empty(), detail)
}

fn c4_inversion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 4);
    let mut worst = 0.0_f64;
    let mut errors = 0;
    for form in BridgeForm::ALL {
        for _ in 0..50 {
            let types = form_types(form, &mut rng);
            let (cj, ck) = (random_cutoffs(types.0, &mut rng), random_cutoffs(types.1, &mut rng));
            let rho = rng.random_range(-0.9..0.9);
            let kind = PairKind::new(types.0, types.1);
            match bridge_forward(rho, kind, &cj, &ck).and_then(|tau| bridge_inverse(tau, kind, &cj, &ck)) {
                Ok(back) => worst = worst.max((back - rho).abs()),
                Err(_) => errors += 1,
            }
        }
    }
    outcome(
        worst <= 1e-6 && errors == 0,
        format!("500 settings, max |rho - F^-1(F(rho))| = {worst:.2e}, errors {errors}"),
    )
}

// =============================================================================
// 5: MVN kernel
// =============================================================================

fn random_correlation(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = &a * a.transpose() + DMatrix::identity(d, d) * 0.3;
    let sd: Vec<f64> = (0..d).map(|i| s[(i, i)].sqrt()).collect();
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { s[(i, j)] / (sd[i] * sd[j]) })
}

/// Fraction of `draws` normal vectors inside the orthant.
fn mc_orthant(upper: &[f64], corr: &DMatrix<f64>, draws: usize, rng: &mut impl Rng) -> f64 {
    let d = upper.len();
    let l = corr.clone().cholesky().expect("PD").l();
    let mut hits = 0usize;
    let mut z = vec![0.0; d];
    for _ in 0..draws {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let inside = (0..d).all(|i| (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>() <= upper[i]);
        hits += inside as usize;
    }
    hits as f64 / draws as f64
}

fn c5_mvn() -> Outcome {
    let mut phi2 = 0.0_f64;
    for i in 0..20 {
        let rho = -0.95 + 1.9 * i as f64 / 19.0;
        let want = 0.25 + rho.asin() / (2.0 * PI);
        phi2 = phi2.max((bvn_cdf(0.0, 0.0, rho).expect("bvn") - want).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 5);
    let mut misses = 0;
    let mut worst = 0.0_f64;
    for d in [3, 4] {
        for _ in 0..20 {
            let corr = random_correlation(d, &mut rng);
            let upper: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let est = mvn_cdf(&upper, &CorrelationMatrix::new(corr.clone()).expect("valid"), 0).expect("cdf");
            let draws = 10_000_000;
            let p = mc_orthant(&upper, &corr, draws, &mut rng);
            // binomial SE at the tested value, so that tiny probabilities
            // with zero hits still get a meaningful scale
            let p0 = est.value.clamp(0.0, 1.0);
            let se = (p0 * (1.0 - p0) / draws as f64 + est.std_error.powi(2)).sqrt();
            let z = (est.value - p).abs() / se.max(f64::MIN_POSITIVE);
            worst = worst.max(z);
            if z > 3.0 {
                misses += 1;
            }
        }
    }
    outcome(
        phi2 <= 1e-9 && misses == 0,
        format!("Phi2 max error {phi2:.1e}; Phi3/Phi4 outside 3 SE: {misses} of 40, largest |z| {worst:.2}"),
    )
}

// =============================================================================
// 6: BLUP
// =============================================================================

fn random_model(grid: &[f64], jn: usize, rng: &mut impl Rng) -> LatentCorrelationModel {
    let mut surfaces = Vec::new();
    for j in 0..jn {
        for k in j..jn {
            let mut s = SplineSurface::constant(j, k, 4, 0.3).expect("surface");
            s.u = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.5));
            if j == k {
                s.u = (&s.u + s.u.transpose()) * 0.5;
            }
            surfaces.push(s);
        }
    }
    LatentCorrelationModel::new(grid.to_vec(), jn, surfaces, 1e-3, false).expect("model")
}

fn c6_blup() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 6);
    let (jn, m) = (2, 7);
    let grid = regular_grid(m).expect("grid");
    let identity = MonotoneTransform::from_knots(vec![-100.0, 100.0], vec![-100.0, 100.0]).expect("transform");
    let mut worst = 0.0_f64;
    let mut deterministic = true;
    for _ in 0..10 {
        let model = random_model(&grid, jn, &mut rng);
        // one subject observed at a random subset of grid points
        let mut obs = Vec::new();
        for j in 0..jn {
            for &t in &grid {
                if rng.random_bool(0.5) {
                    obs.push(Observation { subject: 0, component: j, time: t, value: rng.sample(StandardNormal) });
                }
            }
        }
        if obs.is_empty() {
            obs.push(Observation { subject: 0, component: 0, time: grid[0], value: 0.4 });
        }
        let components = (0..jn)
            .map(|j| Component { name: format!("c{j}"), vtype: VariableType::Continuous })
            .collect();
        let data = MixedDataset::new(vec!["s".into()], components, obs.clone()).expect("dataset");
        let times = data.pooled_times().to_vec();
        let marginals = MarginalModel::from_parts(
            times.clone(),
            vec![VariableType::Continuous; jn],
            vec![vec![None; times.len()]; jn],
            vec![vec![Some(identity.clone()); times.len()]; jn],
        )
        .expect("marginals");
        let pred = predict_latent(&data, 0, &model, &marginals, &GibbsOptions::default()).expect("prediction");
        deterministic &= pred.method == PredictionMethod::Deterministic;

        let coords: Vec<usize> = data
            .observations()
            .iter()
            .map(|o| o.component * m + grid.iter().position(|&g| g == o.time).expect("on grid"))
            .collect();
        let z = DVector::from_iterator(coords.len(), data.observations().iter().map(|o| o.value));
        let c = &model.covariance;
        let c_oo = DMatrix::from_fn(coords.len(), coords.len(), |a, b| c[(coords[a], coords[b])]);
        let c_ao = DMatrix::from_fn(jn * m, coords.len(), |a, b| c[(a, coords[b])]);
        let want = c_ao * c_oo.lu().solve(&z).expect("invertible");
        let got = pred.stacked();
        worst = worst.max((got - want).abs().max());
    }
    outcome(
        worst <= 1e-8 && deterministic,
        format!("10 models, max |BLUP - closed form| = {worst:.2e}, closed-form path used: {deterministic}"),
    )
}

// =============================================================================
// 7: PD projection
// =============================================================================

fn c7_projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 7);
    let mut min_eig = f64::INFINITY;
    let mut indefinite = 0;
    for _ in 0..50 {
        let jn = rng.random_range(2..=4);
        let m = rng.random_range(4..=9);
        let mut blocks = vec![vec![DMatrix::zeros(m, m); jn]; jn];
        for a in 0..jn {
            for b in a..jn {
                let mut blk = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
                if a == b {
                    blk = (&blk + blk.transpose()) * 0.5;
                    blk.fill_diagonal(1.0);
                }
                blocks[b][a] = blk.transpose();
                blocks[a][b] = blk;
            }
        }
        let (assembled, projected) = assemble_and_project(&blocks, 1e-3).expect("projection");
        if assembled.symmetric_eigenvalues().min() < 0.0 {
            indefinite += 1;
        }
        min_eig = min_eig.min(projected.symmetric_eigenvalues().min());
    }
    outcome(
        min_eig >= 1e-3 - 1e-12,
        format!("50 matrices ({indefinite} indefinite before projection), min eigenvalue after {min_eig:.6e}"),
    )
}

// =============================================================================
// 8: FPCA invariants
// =============================================================================

fn latent(subject: usize, grid: &[f64], values: DMatrix<f64>) -> LatentPrediction {
    LatentPrediction {
        subject,
        grid: grid.to_vec(),
        components: (0..values.nrows()).collect(),
        values,
        method: PredictionMethod::Deterministic,
        sampler: None,
        split_difference: 0.0,
    }
}

fn c8_fpca() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 8);
    let (jn, m, n) = (3, 11, 40);
    let grid = regular_grid(m).expect("grid");
    let w = trapezoid_weights(&grid).expect("weights");

    // Gram and trace on random latents
    let lat: Vec<_> = (0..n)
        .map(|i| latent(i, &grid, DMatrix::from_fn(jn, m, |_, _| rng.sample(StandardNormal))))
        .collect();
    let sys = mfpca_full(&lat, 0.95).expect("fpca");
    let k = sys.eigenvalues.len();
    let gram = (sys.gram(k) - DMatrix::identity(k, k)).abs().max();
    let mut x = DMatrix::zeros(n, jn * m);
    for (i, l) in lat.iter().enumerate() {
        x.set_row(i, &l.stacked().transpose());
    }
    let mean = x.row_mean();
    let mut trace = 0.0;
    for c in 0..jn * m {
        let var = (0..n).map(|i| (x[(i, c)] - mean[c]).powi(2)).sum::<f64>() / (n - 1) as f64;
        trace += w[c % m] * var;
    }
    let trace_err = (sys.eigenvalues.iter().sum::<f64>() - trace).abs();

    // rank one: X_i = ξ_i φ with φ of unit quadrature norm
    let raw: Vec<f64> = (0..jn * m).map(|c| (PI * grid[c % m]).sin() * (1.0 + (c / m) as f64)).collect();
    let norm = raw.iter().enumerate().map(|(c, v)| w[c % m] * v * v).sum::<f64>().sqrt();
    let phi: Vec<f64> = raw.iter().map(|v| v / norm).collect();
    let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let lat1: Vec<_> = xi
        .iter()
        .enumerate()
        .map(|(i, &s)| latent(i, &grid, DMatrix::from_fn(jn, m, |r, c| s * phi[r * m + c])))
        .collect();
    let sys1 = mfpca_full(&lat1, 0.95).expect("fpca");
    let xbar = xi.iter().sum::<f64>() / n as f64;
    let var_xi = xi.iter().map(|v| (v - xbar).powi(2)).sum::<f64>() / (n - 1) as f64;
    let recovered = sys1.eigenfunctions.column(0);
    let rank1 = (0..jn * m)
        .map(|c| (recovered[c] - phi[c]).abs())
        .fold((sys1.eigenvalues[0] - var_xi).abs(), f64::max)
        .max(sys1.eigenvalues[1..].iter().copied().fold(0.0, f64::max));
    let pass = gram <= 1e-8 && trace_err <= 1e-8 && rank1 <= 1e-8 && sys1.retained == 1;
    outcome(
        pass,
        format!("Gram deviation {gram:.1e}, trace error {trace_err:.1e}, rank-one error {rank1:.1e}"),
    )
}

// =============================================================================
// 9: ps diagnostic
// =============================================================================

fn c9_ps_diagnostic() -> Outcome {
    let mut config = SimulationConfig::new(Scenario::Nonstationary, 4, 500);
    config.seed = SEED;
    let sim = simulate(&config, replication_seed(SEED, 0)).expect("simulate");
    let data = sim.data.as_ref().expect("data");
    let full = fit(data, &FitConfig::default()).expect("full fit");
    let ps = fit(data, &FitConfig { method: Method::PsM2fpca, ..FitConfig::default() }).expect("ps fit");
    let w = trapezoid_weights(&sim.grid).expect("weights");
    let m = sim.grid.len();
    let shared = &ps.eigen.eigenfunctions;

    // per component, match the top three shared functions with the top three
    // eigenfunctions of the full fit's marginal block
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut worst = f64::INFINITY;
    let mut per_component = Vec::new();
    for j in 0..config.p {
        let (_, marginal) = weighted_eigen(&full.model.block(j, j), &w);
        let ip = |a: usize, b: usize| (0..m).map(|t| w[t] * shared[(t, a)] * marginal[(t, b)]).sum::<f64>().abs();
        let best = perms
            .iter()
            .map(|p| [ip(0, p[0]), ip(1, p[1]), ip(2, p[2])])
            .max_by(|a, b| a.iter().sum::<f64>().total_cmp(&b.iter().sum::<f64>()))
            .expect("permutations");
        let low = best.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.min(low);
        per_component.push(format!("{:.3}/{:.3}/{:.3}", best[0], best[1], best[2]));
    }
    outcome(
        worst >= 0.9,
        format!("n = 500, matched |inner products| per component: {}", per_component.join(", ")),
    )
}

// =============================================================================
// 10: determinism
// =============================================================================

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut config = SimulationConfig::new(Scenario::Stationary, 3, 60);
    config.m = 10;
    config.seed = SEED;
    config.replications = 2;
    let fit_config = FitConfig { grid_size: 10, k_candidates: vec![4, 5], ..FitConfig::default() };
    let mut csv = Vec::new();
    for run in 0..2 {
        let report = benchmark(&config, &BenchMethod::ALL, &fit_config).expect("benchmark");
        let path = dir.path().join(format!("bench{run}.csv"));
        report.write_csv(&path).expect("csv");
        csv.push(std::fs::read(&path).expect("read"));
    }
    let sim = simulate(&config, replication_seed(SEED, 0)).expect("simulate");
    let data = sim.data.as_ref().expect("data");
    let models: Vec<String> = (0..2)
        .map(|_| fit(data, &fit_config).expect("fit").model.to_json().expect("json"))
        .collect();
    let same_csv = csv[0] == csv[1];
    let same_model = models[0] == models[1];
    outcome(
        same_csv && same_model,
        format!("benchmark CSV identical: {same_csv}, model JSON identical: {same_model}"),
    )
}
