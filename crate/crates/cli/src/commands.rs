use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use mixfpca::covfit::LatentCorrelationModel;
use mixfpca::data::{load_dataset, MixedDataset, Schema, Sidecar};
use mixfpca::fpca::{explained_variance, EigenSystem};
use mixfpca::latent::{predict_curves, GibbsOptions};
use mixfpca::marginals::MarginalModel;
use mixfpca::pipeline::{self, substream, FitConfig, Method};
use mixfpca::sim::{self, BenchMethod, Scenario, SimulationConfig};

use crate::manifest::Manifest;
use crate::plot;
use crate::{
    BenchMethodArg, BenchmarkArgs, DataArgs, FitArgs, FitOptions, MethodArg, PlotArgs, PredictArgs, ScenarioArg,
    ScoresArgs, SimulateArgs,
};

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

fn sidecar_path(data: &Path, sidecar: Option<&PathBuf>) -> PathBuf {
    sidecar.cloned().unwrap_or_else(|| data.with_extension("json"))
}

fn load(args: &DataArgs) -> Result<(MixedDataset, Sidecar, PathBuf)> {
    let sidecar_path = sidecar_path(&args.data, args.sidecar.as_ref());
    let sidecar = Sidecar::from_path(&sidecar_path)
        .with_context(|| format!("reading sidecar {}", sidecar_path.display()))?;
    let data = load_dataset(&args.data, &Schema::default(), &sidecar)
        .with_context(|| format!("loading {}", args.data.display()))?;
    Ok((data, sidecar, sidecar_path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn scenario(s: ScenarioArg) -> Scenario {
    match s {
        ScenarioArg::Stationary => Scenario::Stationary,
        ScenarioArg::Nonstationary => Scenario::Nonstationary,
    }
}

fn fit_config(o: &FitOptions) -> FitConfig {
    let mut config = FitConfig {
        method: match o.method {
            MethodArg::M2fpca => Method::M2fpca,
            MethodArg::PsM2fpca => Method::PsM2fpca,
        },
        grid_size: o.grid as usize,
        c0: o.c0,
        epsilon: o.epsilon,
        k_candidates: o.k_candidates.clone(),
        var_threshold: o.var_threshold,
        seed: o.seed,
        ..FitConfig::default()
    };
    // record the derived seeds so the manifest shows what actually ran
    config.tables = config.table_options();
    config.gibbs = config.sampler_options();
    config
}

// =============================================================================
// simulate
// =============================================================================

pub fn simulate(args: &SimulateArgs, threads: Option<usize>) -> Result<()> {
    let mut config = SimulationConfig::new(scenario(args.scenario), args.p as usize, args.n as usize);
    config.m = args.grid as usize;
    config.seed = args.seed;
    let sim = sim::simulate(&config, substream(args.seed, "sim"))?;
    let data = sim.data.as_ref().expect("simulate returns data");
    create_dir(&args.out)?;
    let csv = args.out.join("data.csv");
    let sidecar = args.out.join("data.json");
    data.save(&csv, &sidecar)?;
    let truth = args.out.join("truth.json");
    write_text(&truth, &serde_json::to_string_pretty(&sim)?)?;
    let mut manifest = Manifest::new("simulate", args.seed, threads, &config);
    manifest.outputs = vec![csv, sidecar, truth];
    manifest.write(&args.out)
}

// =============================================================================
// fit
// =============================================================================

#[derive(Serialize)]
struct FitSummary<'a> {
    method: Method,
    n_subjects: usize,
    n_components: usize,
    retained: usize,
    eigenvalues: &'a [f64],
    explained: Vec<f64>,
    cumulative: Vec<f64>,
    blocks: &'a [pipeline::BlockReport],
    mixing_warnings: usize,
}

#[derive(Serialize)]
struct FitFailure {
    stage: Option<&'static str>,
    message: String,
}

pub fn fit(args: &FitArgs, threads: Option<usize>) -> Result<()> {
    let config = fit_config(&args.options);
    let (data, _, sidecar) = load(&args.data)?;
    create_dir(&args.out)?;
    let mut manifest = Manifest::new("fit", config.seed, threads, &config);
    manifest.inputs = vec![args.data.data.clone(), sidecar];

    let result = match pipeline::fit(&data, &config) {
        Ok(r) => r,
        Err(e) => {
            let stage = match &e {
                mixfpca::Error::Stage { stage, .. } => Some(*stage),
                _ => None,
            };
            let failure = args.out.join("error.json");
            write_text(
                &failure,
                &serde_json::to_string_pretty(&FitFailure { stage, message: e.to_string() })?,
            )?;
            manifest.status = "failed";
            manifest.outputs = vec![failure];
            manifest.write(&args.out)?;
            return Err(e.into());
        }
    };

    let model = args.out.join("model.json");
    write_text(&model, &result.model.to_json()?)?;
    let eigen = args.out.join("eigen.json");
    write_text(&eigen, &result.eigen.to_json()?)?;
    let scores = args.out.join("scores.csv");
    let names: Vec<String> = data.components().iter().map(|c| c.name.clone()).collect();
    result.eigen.write_scores_csv(&scores, data.subjects(), &names)?;
    let (explained, cumulative) = explained_variance(&result.eigen.eigenvalues)?;
    let summary = args.out.join("summary.json");
    write_text(
        &summary,
        &serde_json::to_string_pretty(&FitSummary {
            method: config.method,
            n_subjects: data.n_subjects(),
            n_components: data.n_components(),
            retained: result.eigen.retained,
            eigenvalues: &result.eigen.eigenvalues,
            explained,
            cumulative,
            blocks: &result.blocks,
            mixing_warnings: result.mixing_warnings(),
        })?,
    )?;
    manifest.outputs = vec![model, eigen, scores, summary];
    manifest.write(&args.out)
}

// =============================================================================
// predict
// =============================================================================

#[derive(Serialize)]
struct PredictParameters<'a> {
    model: &'a Path,
    subjects: &'a [String],
    times: &'a [f64],
    gibbs: GibbsOptions,
}

pub fn predict(args: &PredictArgs, threads: Option<usize>) -> Result<()> {
    let (data, sidecar, sidecar_path) = load(&args.data)?;
    let text = std::fs::read_to_string(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let model = LatentCorrelationModel::from_json(&text).context("parsing model")?;
    if model.n_components != data.n_components() {
        bail!(
            "model has {} components but the dataset has {}",
            model.n_components,
            data.n_components()
        );
    }
    let [a, b] = sidecar.time_range;
    let times: Vec<f64> = if args.times.is_empty() {
        model.grid.clone()
    } else {
        args.times.iter().map(|t| (t - a) / (b - a)).collect()
    };
    let subjects: Vec<usize> = if args.subject.is_empty() {
        (0..data.n_subjects()).collect()
    } else {
        args.subject
            .iter()
            .map(|id| {
                data.subjects()
                    .iter()
                    .position(|s| s == id)
                    .with_context(|| format!("unknown subject {id:?}"))
            })
            .collect::<Result<_>>()?
    };
    let gibbs = GibbsOptions {
        seed: substream(args.seed, "sampler"),
        ..GibbsOptions::default()
    };
    let marginals = MarginalModel::fit(&data);
    let new_times = vec![times.clone(); model.n_components];

    create_dir(&args.out)?;
    let path = args.out.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["subject_id", "component", "time", "latent_mean", "latent_sd", "observed_prediction"])?;
    for &i in &subjects {
        let pred = predict_curves(&data, i, &new_times, &model, &marginals, &gibbs)?;
        for (j, points) in pred.components.iter().enumerate() {
            for p in points {
                w.write_record([
                    data.subjects()[i].clone(),
                    data.components()[j].name.clone(),
                    (a + p.time * (b - a)).to_string(),
                    p.latent.to_string(),
                    p.variance.max(0.0).sqrt().to_string(),
                    p.observed.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;

    let ids: Vec<String> = subjects.iter().map(|&i| data.subjects()[i].clone()).collect();
    let mut manifest = Manifest::new(
        "predict",
        args.seed,
        threads,
        PredictParameters {
            model: &args.model,
            subjects: &ids,
            times: &times,
            gibbs,
        },
    );
    manifest.inputs = vec![args.data.data.clone(), sidecar_path, args.model.clone()];
    manifest.outputs = vec![path];
    manifest.write(&args.out)
}

// =============================================================================
// scores
// =============================================================================

pub fn scores(args: &ScoresArgs, threads: Option<usize>) -> Result<()> {
    let text = std::fs::read_to_string(&args.eigen).with_context(|| format!("reading {}", args.eigen.display()))?;
    let system = EigenSystem::from_json(&text).context("parsing eigen file")?;
    let mut inputs = vec![args.eigen.clone()];
    let (subjects, components) = match &args.data {
        Some(path) => {
            let (data, _, sidecar) = load(&DataArgs {
                data: path.clone(),
                sidecar: args.sidecar.clone(),
            })?;
            inputs.push(path.clone());
            inputs.push(sidecar);
            (
                data.subjects().to_vec(),
                data.components().iter().map(|c| c.name.clone()).collect(),
            )
        }
        None => (Vec::new(), Vec::new()),
    };
    create_dir(&args.out)?;
    let path = args.out.join("scores.csv");
    system.write_scores_csv(&path, &subjects, &components)?;
    let mut manifest = Manifest::new("scores", 0, threads, serde_json::json!({ "eigen": args.eigen }));
    manifest.inputs = inputs;
    manifest.outputs = vec![path];
    manifest.write(&args.out)
}

// =============================================================================
// benchmark
// =============================================================================

#[derive(Serialize)]
struct BenchmarkParameters<'a> {
    simulation: &'a SimulationConfig,
    methods: &'a [BenchMethod],
    fit: &'a FitConfig,
}

pub fn benchmark(args: &BenchmarkArgs, threads: Option<usize>) -> Result<()> {
    let mut config = SimulationConfig::new(scenario(args.scenario), args.p as usize, args.n as usize);
    config.m = args.options.grid as usize;
    config.seed = args.options.seed;
    config.replications = args.reps as usize;
    let methods: Vec<BenchMethod> = args
        .methods
        .iter()
        .map(|m| match m {
            BenchMethodArg::M2fpca => BenchMethod::M2fpca,
            BenchMethodArg::PsM2fpca => BenchMethod::PsM2fpca,
            BenchMethodArg::NaiveMfpca => BenchMethod::NaiveMfpca,
        })
        .collect();
    let fit = fit_config(&args.options);
    let report = sim::benchmark(&config, &methods, &fit)?;
    create_dir(&args.out)?;
    let csv = args.out.join("benchmark.csv");
    let json = args.out.join("benchmark.json");
    report.write_csv(&csv)?;
    report.write_json(&json)?;
    let mut manifest = Manifest::new(
        "benchmark",
        config.seed,
        threads,
        BenchmarkParameters {
            simulation: &config,
            methods: &methods,
            fit: &fit,
        },
    );
    manifest.outputs = vec![csv, json];
    manifest.write(&args.out)
}

// =============================================================================
// plot
// =============================================================================

pub fn plot(args: &PlotArgs, threads: Option<usize>) -> Result<()> {
    let text = std::fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).context("input is not JSON")?;
    create_dir(&args.out)?;
    let path;
    if value.get("covariance").is_some() {
        let model = LatentCorrelationModel::from_json(&text).context("parsing model")?;
        path = args.out.join("covariance.svg");
        write_text(&path, &plot::heatmap(&model, &[]))?;
    } else if value.get("eigenfunctions").is_some() {
        let system = EigenSystem::from_json(&text).context("parsing eigen file")?;
        path = args.out.join("eigenfunctions.svg");
        write_text(&path, &plot::eigenfunctions(&system, &[]))?;
    } else {
        bail!("{} is neither a model nor an eigen file", args.input.display());
    }
    let mut manifest = Manifest::new("plot", 0, threads, serde_json::json!({ "input": args.input }));
    manifest.inputs = vec![args.input.clone()];
    manifest.outputs = vec![path];
    manifest.write(&args.out)
}
