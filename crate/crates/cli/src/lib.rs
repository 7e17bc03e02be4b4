//! Command line front end: simulation, single fits, replicate experiments,
//! the record-noise grid and report regeneration.

pub mod plot;

use clap::{Args, Parser, Subcommand, ValueEnum};
use plot::{Interval, Point};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use tsln_core::area::gvf::GvfCorrection;
use tsln_core::area::{AreaEstimates, ModelKind};
use tsln_core::baselines::{fit_beta, fit_bin, fit_eln, fit_log};
use tsln_core::engine::SamplerConfig;
use tsln_core::experiment::{
    self, comparison_table, read_metrics_csv, write_json, ComparisonRow, ExperimentConfig, ExperimentResults,
    FitStatus, GridConfig, GridRow, Stage2Options, GROUPS,
};
use tsln_core::sim::{self, census_for, draw_informative_sample, write_census, CensusFrame, ScenarioConfig};
use tsln_core::stage1::Stage1Spec;
use tsln_core::stage2::fit_tsln;
use tsln_core::survey::{self, DirectEstimates, WeightSet};
use tsln_core::{Error, Result};

/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for malformed or unusable input data.
pub const EXIT_DATA: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Json(_) => EXIT_DATA,
        e if e.is_data_error() => EXIT_DATA,
        _ => 1,
    }
}

#[derive(Debug, Parser)]
#[command(name = "tsln", version, about = "Two-stage logistic-normal small area estimation")]
pub struct Cli {
    /// Worker threads for replicates and chains.
    #[arg(long, env = "TSLN_WORKERS", global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic census and draw one informative sample.
    Simulate(SimulateArgs),
    /// Fit one model to a sample.
    Fit(FitArgs),
    /// Run repeated samples through several models and summarise.
    Replicate(ReplicateArgs),
    /// Stage-one smoothing probe over record-noise levels.
    SuppeGrid(GridArgs),
    /// Rebuild tables and plots from an existing metrics CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SamplerArgs {
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SamplerArgs {
    pub fn apply(&self, cfg: &mut SamplerConfig) {
        if let Some(v) = self.chains {
            cfg.chains = v;
        }
        if let Some(v) = self.warmup {
            cfg.warmup = v;
        }
        if let Some(v) = self.draws {
            cfg.draws = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorrectionArg {
    Corrected,
    Naive,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Stage2Args {
    /// Edge-list CSV; switches on the spatial stage-two effect.
    #[arg(long, value_name = "ADJACENCY")]
    pub spatial: Option<PathBuf>,
    /// Penalised benchmarking to regional direct estimates.
    #[arg(long)]
    pub benchmark: bool,
    /// JSON file of regional targets; defaults to direct estimates over contiguous blocks.
    #[arg(long)]
    pub benchmark_file: Option<PathBuf>,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub gvf_correction: Option<CorrectionArg>,
}

impl Stage2Args {
    pub fn apply(&self, opts: &mut Stage2Options) {
        if let Some(p) = &self.spatial {
            opts.spatial = true;
            opts.adjacency = Some(p.clone());
        }
        if self.benchmark || self.benchmark_file.is_some() {
            opts.benchmark = true;
        }
        if let Some(p) = &self.benchmark_file {
            opts.benchmark_file = Some(p.clone());
        }
        if let Some(r) = self.regions {
            opts.regions = r;
        }
        if let Some(e) = self.epsilon {
            opts.epsilon = e;
        }
        match self.gvf_correction {
            Some(CorrectionArg::Corrected) => opts.gvf_correction = GvfCorrection::Corrected,
            Some(CorrectionArg::Naive) => opts.gvf_correction = GvfCorrection::Naive,
            None => {}
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scenario JSON; overrides the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "sc3")]
    pub preset: String,
    /// 100 areas with 60 sampled instead of 40 with 24.
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replicate index of the drawn sample.
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Sample CSV (`area_id,y,x_survey,x_census,w_raw`).
    #[arg(long)]
    pub sample: PathBuf,
    /// Area CSV (`area_id,population,z`).
    #[arg(long)]
    pub areas: PathBuf,
    #[arg(long)]
    pub model: String,
    /// Census directory written by `simulate`; required by LOG.
    #[arg(long)]
    pub census: Option<PathBuf>,
    /// JSON fit options (`engine`, `stage2`, `hdi_mass`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub stage2: Stage2Args,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplicateArgs {
    /// Experiment JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario preset used without a config file.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Comma-separated subset of TSLN,LOG,BIN,BETA,ELN.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub stage2: Stage2Args,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub sigma_e: Option<Vec<f64>>,
    /// Skip the stage-two fits (SR and ALC only).
    #[arg(long)]
    pub no_stage2: bool,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Output directory of a `replicate` run.
    #[arg(long)]
    pub dir: PathBuf,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn desk_defaults(engine: &mut SamplerConfig) {
    *engine = SamplerConfig { chains: 4, warmup: 500, draws: 500, ..engine.clone() };
}

/// Runs one parsed command on a pool of `workers` threads.
pub fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("worker count must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a).map(|_| ()),
        Command::Replicate(a) => cmd_replicate(&a).map(|_| ()),
        Command::SuppeGrid(a) => cmd_suppe_grid(&a).map(|_| ()),
        Command::Report(a) => cmd_report(&a).map(|_| ()),
    })
}

fn scenario_preset(name: &str, full: bool, seed: u64) -> Result<ScenarioConfig> {
    if full {
        ScenarioConfig::full_scale(name, seed)
    } else {
        ScenarioConfig::desk_scale(name, seed)
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut scenario = match &args.config {
        Some(p) => read_json::<ScenarioConfig>(p)?,
        None => scenario_preset(&args.preset, args.full_scale, 1)?,
    };
    if let Some(s) = args.seed {
        scenario.seed = s;
    }
    scenario.validate()?;
    let census = census_for(&scenario)?;
    write_census(args.out.join("census"), &census, &scenario)?;
    let sample = draw_informative_sample(&census, &scenario, args.replicate)?;
    survey::write_sample(args.out.join("sample.csv"), &sample)?;
    survey::write_areas(args.out.join("areas.csv"), sample.areas())?;
    let manifest = serde_json::json!({
        "scenario": scenario,
        "replicate": args.replicate,
        "records": sample.len(),
        "sampled_areas": sample.sampled_count(),
        "code_version": env!("CARGO_PKG_VERSION"),
    });
    write_json(&args.out.join("manifest.json"), &manifest)?;
    log::info!("wrote {} records from {} areas to {}", sample.len(), sample.sampled_count(), args.out.display());
    Ok(())
}

fn default_mass() -> f64 {
    0.95
}

/// Options of a single fit.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub engine: SamplerConfig,
    #[serde(default)]
    pub stage2: Stage2Options,
    #[serde(default = "default_mass")]
    pub hdi_mass: f64,
}

/// Outcome of `fit`, also written to `status.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStatusFile {
    pub model: ModelKind,
    pub status: FitStatus,
    pub max_rhat: f64,
    pub areas: usize,
}

pub fn cmd_fit(args: &FitArgs) -> Result<FitStatusFile> {
    let model = ModelKind::parse(&args.model)?;
    let mut cfg = match &args.config {
        Some(p) => read_json::<FitConfig>(p)?,
        None => FitConfig { hdi_mass: default_mass(), ..FitConfig::default() },
    };
    args.sampler.apply(&mut cfg.engine);
    args.stage2.apply(&mut cfg.stage2);
    cfg.stage2.validate()?;
    if !(cfg.hdi_mass > 0.0 && cfg.hdi_mass < 1.0) {
        return Err(Error::Config("hdi_mass must lie in (0, 1)".into()));
    }
    let census = match (&args.census, model) {
        (Some(dir), _) => Some(sim::read_census(dir)?),
        (None, ModelKind::Log) => return Err(Error::CensusRequired),
        (None, _) => None,
    };
    let sample = survey::read_sample(&args.sample, &args.areas)?;
    std::fs::create_dir_all(&args.out)?;

    let weights = WeightSet::from_sample(&sample);
    let direct = DirectEstimates::compute(&sample, &weights)?;
    let (est, s1_ok) = match model {
        ModelKind::Tsln => {
            let spec = cfg.stage2.build(&sample)?;
            let fit = fit_tsln(&sample, &Stage1Spec::tsln(), &spec, &cfg.engine)?;
            fit.summaries.write_summary_csv(std::fs::File::create(args.out.join("s1_summary.csv"))?, &direct)?;
            let ok = fit.stage1.converged();
            (fit.estimates, ok)
        }
        ModelKind::Log => (fit_log(&sample, census.as_ref().expect("checked above"), &cfg.engine)?, true),
        ModelKind::Bin => (fit_bin(&sample, &cfg.engine)?, true),
        ModelKind::Beta => (fit_beta(&sample, &cfg.engine)?, true),
        ModelKind::Eln => (fit_eln(&sample, cfg.stage2.gvf_correction, &cfg.engine)?, true),
    };
    write_estimates(&args.out, &est, cfg.hdi_mass)?;
    est.posterior.write_csv(std::fs::File::create(args.out.join("draws.csv"))?)?;
    write_json(&args.out.join("diagnostics.json"), &est.posterior.diagnostics_json())?;

    let truth = census.as_ref().map(CensusFrame::true_mu);
    plot_fit(&args.out, &est, &direct, truth.as_deref(), cfg.hdi_mass)?;

    let converged = s1_ok && est.converged();
    let status = FitStatusFile {
        model,
        status: if converged { FitStatus::Converged } else { FitStatus::Discarded },
        max_rhat: est.max_rhat(),
        areas: est.m(),
    };
    if !converged {
        log::warn!("{model} did not pass the R-hat gate (max {:.3})", status.max_rhat);
    }
    write_json(&args.out.join("status.json"), &status)?;
    Ok(status)
}

fn write_estimates(dir: &Path, est: &AreaEstimates, mass: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("estimates.csv"))?;
    for s in est.summaries(mass)? {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

fn plot_fit(dir: &Path, est: &AreaEstimates, direct: &DirectEstimates, truth: Option<&[f64]>, mass: f64) -> Result<()> {
    let summaries = est.summaries(mass)?;
    let items: Vec<Interval> = summaries
        .iter()
        .map(|s| Interval {
            label: format!("area {}", s.area_id),
            mid: s.median,
            lo: s.hdi_lo,
            hi: s.hdi_hi,
            reference: truth.map(|t| t[s.area_id as usize - 1]),
            highlight: s.sampled,
        })
        .collect();
    let title = format!("{} posterior medians and {:.0}% HDIs", est.model, 100.0 * mass);
    std::fs::write(dir.join("caterpillar.svg"), plot::caterpillar(&title, "proportion", &items))?;
    let points: Vec<Point> = summaries
        .iter()
        .filter_map(|s| {
            let d = direct.get(s.area_id)?;
            Some(Point { x: d.mu, y: s.median, y_interval: Some((s.hdi_lo, s.hdi_hi)) })
        })
        .collect();
    let title = format!("{} against direct estimates", est.model);
    std::fs::write(dir.join("scatter.svg"), plot::scatter(&title, "direct", est.model.as_str(), &points, true))?;
    Ok(())
}

/// Resolves the experiment configuration from file, preset and flags.
pub fn experiment_config(args: &ReplicateArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<ExperimentConfig>(p)?,
        None => {
            let scenario = scenario_preset(args.scenario.as_deref().unwrap_or("sc3"), args.full_scale, 1)?;
            let mut engine = SamplerConfig::default();
            desk_defaults(&mut engine);
            ExperimentConfig {
                scenario,
                replicates: if args.full_scale { 500 } else { 50 },
                models: ModelKind::ALL.to_vec(),
                engine,
                stage2: Stage2Options::default(),
                hdi_mass: default_mass(),
                output: PathBuf::from("out"),
            }
        }
    };
    if args.config.is_some() {
        if let Some(name) = &args.scenario {
            let seed = cfg.scenario.seed;
            cfg.scenario = scenario_preset(name, args.full_scale, seed)?;
        }
    }
    if let Some(d) = args.replicates {
        cfg.replicates = d;
    }
    if let Some(models) = &args.models {
        cfg.models = models.iter().map(|m| ModelKind::parse(m.trim())).collect::<Result<_>>()?;
    }
    args.sampler.apply(&mut cfg.engine);
    args.stage2.apply(&mut cfg.stage2);
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_replicate(args: &ReplicateArgs) -> Result<(ExperimentConfig, ExperimentResults)> {
    let cfg = experiment_config(args)?;
    let (census, results) = experiment::run_experiment(&cfg)?;
    experiment::write_outputs(&cfg.output, &cfg, &census, &results)?;
    write_json(&cfg.output.join("config.json"), &cfg)?;
    write_boxplots(&cfg.output, &cfg.models, &results)?;
    print_comparison(&comparison_table(&cfg.scenario.name, &cfg.models, &results));
    log::info!(
        "{} converged, {} discarded, {} failed in {:.1} s",
        results.count(FitStatus::Converged),
        results.count(FitStatus::Discarded),
        results.count(FitStatus::Failed),
        results.wall_clock_seconds
    );
    Ok((cfg, results))
}

/// Distribution over replicates of each metric, one box per model.
pub fn write_boxplots(dir: &Path, models: &[ModelKind], results: &ExperimentResults) -> Result<()> {
    for metric in ["mrrmse", "marb", "ci_width"] {
        for (group, _) in GROUPS {
            let boxes: Vec<(String, Vec<f64>)> = models
                .iter()
                .map(|m| (m.to_string(), results.values(m.as_str(), group, metric)))
                .filter(|(_, v)| !v.is_empty())
                .collect();
            if boxes.is_empty() {
                continue;
            }
            let svg = plot::boxplot(&format!("{} ({group} areas)", metric.to_uppercase()), metric, &boxes);
            std::fs::write(dir.join(format!("boxplot_{metric}_{group}.svg")), svg)?;
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
}

pub fn print_comparison(table: &[ComparisonRow]) {
    println!(
        "{:<6} {:<11} {:>4} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}",
        "model", "areas", "D", "MRRMSE", "MARB", "width", "cover", "r.RRMSE", "r.ARB", "r.width"
    );
    for r in table {
        println!(
            "{:<6} {:<11} {:>4} {:>8.4} {:>8.4} {:>8.4} {:>8.3} {:>7} {:>7} {:>7}",
            r.model,
            r.sampled,
            r.replicates,
            r.mrrmse,
            r.marb,
            r.ci_width,
            r.coverage,
            fmt_opt(r.mrrmse_ratio),
            fmt_opt(r.marb_ratio),
            fmt_opt(r.ci_width_ratio)
        );
    }
}

/// Resolves the grid configuration from file, preset and flags.
pub fn grid_config(args: &GridArgs) -> Result<GridConfig> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<GridConfig>(p)?,
        None => {
            let mut engine = SamplerConfig::default();
            desk_defaults(&mut engine);
            GridConfig {
                scenario: scenario_preset("suppe", args.full_scale, 1)?,
                replicates: 20,
                sigma_e: experiment::SIGMA_E_GRID.to_vec(),
                area_effect: vec![true, false],
                engine,
                stage2: true,
                hdi_mass: default_mass(),
                output: PathBuf::from("out-grid"),
            }
        }
    };
    if let Some(d) = args.replicates {
        cfg.replicates = d;
    }
    if let Some(s) = &args.sigma_e {
        cfg.sigma_e = s.clone();
    }
    if args.no_stage2 {
        cfg.stage2 = false;
    }
    args.sampler.apply(&mut cfg.engine);
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_suppe_grid(args: &GridArgs) -> Result<Vec<GridRow>> {
    let cfg = grid_config(args)?;
    let start = std::time::Instant::now();
    let rows = experiment::run_grid(&cfg)?;
    std::fs::create_dir_all(&cfg.output)?;
    experiment::write_grid_csv(std::fs::File::create(cfg.output.join("grid.csv"))?, &rows)?;
    let points: Vec<Point> = rows
        .iter()
        .filter(|r| r.status == FitStatus::Converged)
        .filter_map(|r| Some(Point { x: r.sr?, y: r.alc?, y_interval: None }))
        .collect();
    std::fs::write(cfg.output.join("alc_vs_sr.svg"), plot::scatter("ALC against SR", "SR", "ALC", &points, true))?;
    let count = |s: FitStatus| rows.iter().filter(|r| r.status == s).count();
    let manifest = serde_json::json!({
        "config": cfg,
        "cells": rows.len(),
        "converged": count(FitStatus::Converged),
        "discarded": count(FitStatus::Discarded),
        "failed": count(FitStatus::Failed),
        "code_version": env!("CARGO_PKG_VERSION"),
        "wall_clock_seconds": start.elapsed().as_secs_f64(),
    });
    write_json(&cfg.output.join("manifest.json"), &manifest)?;
    Ok(rows)
}

pub fn cmd_report(args: &ReportArgs) -> Result<Vec<ComparisonRow>> {
    let path = args.dir.join("metrics.csv");
    let results = read_metrics_csv(std::fs::File::open(&path)?)?;
    let present: BTreeSet<&str> = results.rows().map(|r| r.model.as_str()).collect();
    let models: Vec<ModelKind> = ModelKind::ALL.into_iter().filter(|m| present.contains(m.as_str())).collect();
    let scenario = results.rows().next().map(|r| r.scenario.clone()).unwrap_or_default();
    let table = comparison_table(&scenario, &models, &results);
    experiment::write_comparison_csv(std::fs::File::create(args.dir.join("comparison.csv"))?, &table)?;
    write_boxplots(&args.dir, &models, &results)?;
    print_comparison(&table);
    Ok(table)
}
