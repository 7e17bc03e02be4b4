//! Replicate harness: repeated informative samples from one synthetic census,
//! every requested model fitted to each, convergence gating, tidy metric
//! rows, summary tables and the smoothing-probe grid.

use crate::area::benchmark::{read_benchmark_json, regional_direct, BenchmarkSpec};
use crate::area::bym2::{read_adjacency, RhoPrior};
use crate::area::gvf::GvfCorrection;
use crate::area::{AreaEstimates, ModelKind};
use crate::baselines::{fit_beta, fit_bin, fit_eln, fit_log};
use crate::engine::{hdi, SamplerConfig, RHAT_THRESHOLD};
use crate::error::{Error, Result};
use crate::metrics::{arb, freq_mse, rrmse, spread, table4_summaries, FreqMse, S1Diagnostics, Spread};
use crate::rng::{derive_seed, purpose};
use crate::sim::{census_for, draw_informative_sample, CensusFrame, ScenarioConfig};
use crate::stage1::{
    build_s1_estimates, fit_stage1, median, smoothing_ratio, alc_from, Stage1Spec,
};
use crate::stage2::{fit_stage2, SpatialSpec, Stage2Spec};
use crate::survey::{DirectEstimates, Regions, SurveySample, WeightSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn default_epsilon() -> f64 {
    1.0
}

fn default_regions() -> usize {
    4
}

fn default_mass() -> f64 {
    0.95
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Stage-two switches of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Options {
    #[serde(default)]
    pub spatial: bool,
    /// Edge-list CSV; required when `spatial` is on.
    #[serde(default)]
    pub adjacency: Option<PathBuf>,
    #[serde(default)]
    pub rho_prior: RhoPrior,
    #[serde(default)]
    pub benchmark: bool,
    /// Regional targets; without a file the targets are direct estimates
    /// over `regions` contiguous blocks of area ids.
    #[serde(default)]
    pub benchmark_file: Option<PathBuf>,
    #[serde(default = "default_regions")]
    pub regions: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub gvf_correction: GvfCorrection,
}

impl Default for Stage2Options {
    fn default() -> Self {
        Self {
            spatial: false,
            adjacency: None,
            rho_prior: RhoPrior::default(),
            benchmark: false,
            benchmark_file: None,
            regions: default_regions(),
            epsilon: default_epsilon(),
            gvf_correction: GvfCorrection::Corrected,
        }
    }
}

impl Stage2Options {
    pub fn validate(&self) -> Result<()> {
        if self.spatial && self.adjacency.is_none() {
            return Err(Error::config("spatial stage two requires an adjacency file"));
        }
        if self.benchmark && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("benchmark epsilon must be positive"));
        }
        if self.benchmark && self.benchmark_file.is_none() && self.regions == 0 {
            return Err(Error::config("benchmark regions must be positive"));
        }
        Ok(())
    }

    /// Resolves files and sample-based targets into a stage-two spec.
    pub fn build(&self, sample: &SurveySample) -> Result<Stage2Spec> {
        self.validate()?;
        let m = sample.total_areas();
        let spatial = match (&self.spatial, &self.adjacency) {
            (true, Some(path)) => {
                Some(SpatialSpec { graph: read_adjacency(std::fs::File::open(path)?, m)?, rho: self.rho_prior })
            }
            _ => None,
        };
        let benchmark = if !self.benchmark {
            None
        } else if let Some(path) = &self.benchmark_file {
            Some(read_benchmark_json(std::fs::File::open(path)?, m, self.epsilon)?)
        } else {
            let blocks = Regions::contiguous_blocks(m, self.regions.min(m));
            let (regions, c_hat, var) = regional_direct(sample, &blocks)?;
            Some(BenchmarkSpec { regions, c_hat, var, epsilon: self.epsilon })
        };
        Ok(Stage2Spec { spatial, gvf_correction: self.gvf_correction, benchmark, ..Stage2Spec::default() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub replicates: usize,
    pub models: Vec<ModelKind>,
    #[serde(default)]
    pub engine: SamplerConfig,
    #[serde(default)]
    pub stage2: Stage2Options,
    #[serde(default = "default_mass")]
    pub hdi_mass: f64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.replicates == 0 {
            return Err(Error::config("replicates must be at least 1"));
        }
        if self.models.is_empty() {
            return Err(Error::config("at least one model is required"));
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return Err(Error::config("models are listed more than once"));
        }
        if self.engine.chains == 0 || self.engine.draws == 0 {
            return Err(Error::config("chains and draws must be positive"));
        }
        if !(self.hdi_mass > 0.0 && self.hdi_mass < 1.0) {
            return Err(Error::config("hdi_mass must lie in (0, 1)"));
        }
        self.stage2.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Sampler settings of one replicate.
    pub fn engine_for(&self, replicate: usize) -> SamplerConfig {
        self.engine.with_seed(derive_seed(self.engine.seed, &[purpose::REPLICATE, replicate as u64]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitStatus {
    Converged,
    Discarded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub replicate: usize,
    pub model: ModelKind,
    pub status: FitStatus,
    pub max_rhat: Option<f64>,
    pub message: Option<String>,
}

/// Per-area evaluation of one fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaScore {
    pub sampled: bool,
    pub arb: f64,
    pub rrmse: f64,
    pub covered: bool,
    pub width: f64,
    pub median: f64,
}

pub fn score_areas(est: &AreaEstimates, truth: &[f64], mass: f64) -> Result<Vec<AreaScore>> {
    if truth.len() != est.m() {
        return Err(Error::invalid("one truth per area is required"));
    }
    (0..est.m())
        .map(|i| {
            let d = est.mu_draws(i);
            let (lo, hi) = hdi(&d, mass)?;
            Ok(AreaScore {
                sampled: est.sampled[i],
                arb: arb(&d, truth[i])?,
                rrmse: rrmse(&d, truth[i])?,
                covered: lo <= truth[i] && truth[i] <= hi,
                width: hi - lo,
                median: median(&d),
            })
        })
        .collect()
}

/// One tidy metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub model: String,
    pub sampled: String,
    pub metric: String,
    pub replicate: usize,
    pub value: f64,
}

pub const GROUPS: [(&str, bool); 2] = [("sampled", true), ("nonsampled", false)];
/// Model label of the stage-one summary rows.
pub const S1_LABEL: &str = "TSLN-S1";

fn area_rows(scenario: &str, model: ModelKind, replicate: usize, scores: &[AreaScore]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for (label, flag) in GROUPS {
        let group: Vec<&AreaScore> = scores.iter().filter(|s| s.sampled == flag).collect();
        if group.is_empty() {
            continue;
        }
        let n = group.len() as f64;
        let widths: Vec<f64> = group.iter().map(|s| s.width).collect();
        let values = [
            ("mrrmse", group.iter().map(|s| s.rrmse).sum::<f64>() / n),
            ("marb", group.iter().map(|s| s.arb).sum::<f64>() / n),
            ("ci_width", median(&widths)),
            ("coverage", group.iter().filter(|s| s.covered).count() as f64 / n),
            ("n_areas", n),
        ];
        for (metric, value) in values {
            rows.push(MetricRow {
                scenario: scenario.to_string(),
                model: model.to_string(),
                sampled: label.to_string(),
                metric: metric.to_string(),
                replicate,
                value,
            });
        }
    }
    rows
}

fn s1_rows(scenario: &str, replicate: usize, d: &S1Diagnostics) -> Vec<MetricRow> {
    [
        ("pct_unstable", d.pct_unstable),
        ("alc", d.alc),
        ("pct_var_increase", d.pct_var_increase),
        ("pct_mab_reduction", d.pct_mab_reduction),
    ]
    .into_iter()
    .map(|(metric, value)| MetricRow {
        scenario: scenario.to_string(),
        model: S1_LABEL.to_string(),
        sampled: "sampled".to_string(),
        metric: metric.to_string(),
        replicate,
        value,
    })
    .collect()
}

/// Everything produced by one replicate.
#[derive(Debug, Clone, Default)]
pub struct ReplicateResult {
    pub runs: Vec<ModelRun>,
    pub rows: Vec<MetricRow>,
    pub medians: Vec<(ModelKind, Vec<f64>)>,
    pub s1: Option<S1Diagnostics>,
}

fn gate(est: &AreaEstimates) -> (FitStatus, f64) {
    let r = est.max_rhat();
    let status = if r <= RHAT_THRESHOLD { FitStatus::Converged } else { FitStatus::Discarded };
    (status, r)
}

struct Fit {
    est: AreaEstimates,
    /// False when the TSLN stage-one posterior fails the gate.
    s1_converged: bool,
    s1: Option<S1Diagnostics>,
}

impl Fit {
    fn single(est: AreaEstimates) -> Self {
        Self { est, s1_converged: true, s1: None }
    }
}

fn fit_one(
    model: ModelKind,
    sample: &SurveySample,
    census: &CensusFrame,
    config: &ExperimentConfig,
    engine: &SamplerConfig,
) -> Result<Fit> {
    match model {
        ModelKind::Tsln => {
            let weights = WeightSet::from_sample(sample);
            let s1 = fit_stage1(sample, &weights, &Stage1Spec::tsln(), engine)?;
            let summaries = build_s1_estimates(&s1.probability_draws(), sample, &weights, engine.seed)?;
            let direct = DirectEstimates::compute(sample, &weights)?;
            let diag = table4_summaries(&direct, &summaries, &census.true_mu()).ok();
            let spec = config.stage2.build(sample)?;
            let s2_engine = engine.with_seed(derive_seed(engine.seed, &[purpose::STAGE_TWO]));
            let est = fit_stage2(&summaries, sample, &spec, &s2_engine)?;
            Ok(Fit { est, s1_converged: s1.converged(), s1: diag })
        }
        ModelKind::Log => Ok(Fit::single(fit_log(sample, census, engine)?)),
        ModelKind::Bin => Ok(Fit::single(fit_bin(sample, engine)?)),
        ModelKind::Beta => Ok(Fit::single(fit_beta(sample, engine)?)),
        ModelKind::Eln => Ok(Fit::single(fit_eln(sample, config.stage2.gvf_correction, engine)?)),
    }
}

pub fn run_replicate(config: &ExperimentConfig, census: &CensusFrame, replicate: usize) -> ReplicateResult {
    let scenario = config.scenario.name.as_str();
    let mut out = ReplicateResult::default();
    let sample = match draw_informative_sample(census, &config.scenario, replicate as u64) {
        Ok(s) => s,
        Err(e) => {
            for &model in &config.models {
                out.runs.push(ModelRun { replicate, model, status: FitStatus::Failed, max_rhat: None, message: Some(e.to_string()) });
            }
            return out;
        }
    };
    let truth = census.true_mu();
    let engine = config.engine_for(replicate);
    for &model in &config.models {
        let result = fit_one(model, &sample, census, config, &engine).and_then(|fit| {
            let scores = score_areas(&fit.est, &truth, config.hdi_mass)?;
            Ok((fit, scores))
        });
        match result {
            Ok((fit, scores)) => {
                let (mut status, r) = gate(&fit.est);
                if !fit.s1_converged {
                    status = FitStatus::Discarded;
                }
                if let (true, Some(d)) = (fit.s1_converged, fit.s1) {
                    out.rows.extend(s1_rows(scenario, replicate, &d));
                    out.s1 = Some(d);
                }
                if status == FitStatus::Converged {
                    out.rows.extend(area_rows(scenario, model, replicate, &scores));
                    out.medians.push((model, scores.iter().map(|s| s.median).collect()));
                }
                out.runs.push(ModelRun { replicate, model, status, max_rhat: Some(r), message: None });
            }
            Err(e) => {
                log::warn!("replicate {replicate}: {model} failed: {e}");
                out.runs.push(ModelRun { replicate, model, status: FitStatus::Failed, max_rhat: None, message: Some(e.to_string()) });
            }
        }
    }
    out
}

/// Collected replicate results in replicate order.
#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub replicates: Vec<ReplicateResult>,
    pub wall_clock_seconds: f64,
}

impl ExperimentResults {
    pub fn rows(&self) -> impl Iterator<Item = &MetricRow> {
        self.replicates.iter().flat_map(|r| r.rows.iter())
    }

    pub fn runs(&self) -> impl Iterator<Item = &ModelRun> {
        self.replicates.iter().flat_map(|r| r.runs.iter())
    }

    pub fn count(&self, status: FitStatus) -> usize {
        self.runs().filter(|r| r.status == status).count()
    }

    /// Per-replicate values of one metric, in replicate order.
    pub fn values(&self, model: &str, sampled: &str, metric: &str) -> Vec<f64> {
        self.rows()
            .filter(|r| r.model == model && r.sampled == sampled && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }
}

/// Runs every replicate on the current rayon pool.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(CensusFrame, ExperimentResults)> {
    config.validate()?;
    let census = census_for(&config.scenario)?;
    if config.models.contains(&ModelKind::Tsln) || config.stage2.benchmark {
        // Surface configuration problems once, before any replicate runs.
        let probe = draw_informative_sample(&census, &config.scenario, 0)?;
        config.stage2.build(&probe)?;
    }
    let start = Instant::now();
    let replicates: Vec<ReplicateResult> =
        (0..config.replicates).into_par_iter().map(|d| run_replicate(config, &census, d)).collect();
    Ok((census, ExperimentResults { replicates, wall_clock_seconds: start.elapsed().as_secs_f64() }))
}

/// One row of the model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub model: String,
    pub sampled: String,
    pub replicates: usize,
    pub mrrmse: f64,
    pub marb: f64,
    pub ci_width: f64,
    pub coverage: f64,
    pub mrrmse_ratio: Option<f64>,
    pub marb_ratio: Option<f64>,
    pub ci_width_ratio: Option<f64>,
}

/// Medians over replicates of MRRMSE, MARB and CI width; coverage pooled
/// over areas and replicates; ratios relative to TSLN.
pub fn comparison_table(scenario: &str, models: &[ModelKind], results: &ExperimentResults) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for (label, _) in GROUPS {
        let mut group = Vec::new();
        for model in models {
            let name = model.to_string();
            let mr = results.values(&name, label, "mrrmse");
            if mr.is_empty() {
                continue;
            }
            let cov = results.values(&name, label, "coverage");
            let n = results.values(&name, label, "n_areas");
            let hits: f64 = cov.iter().zip(&n).map(|(c, n)| c * n).sum();
            group.push(ComparisonRow {
                scenario: scenario.to_string(),
                model: name.clone(),
                sampled: label.to_string(),
                replicates: mr.len(),
                mrrmse: median(&mr),
                marb: median(&results.values(&name, label, "marb")),
                ci_width: median(&results.values(&name, label, "ci_width")),
                coverage: hits / n.iter().sum::<f64>(),
                mrrmse_ratio: None,
                marb_ratio: None,
                ci_width_ratio: None,
            });
        }
        if let Some(base) = group.iter().find(|r| r.model == ModelKind::Tsln.as_str()).cloned() {
            for r in &mut group {
                r.mrrmse_ratio = Some(r.mrrmse / base.mrrmse);
                r.marb_ratio = Some(r.marb / base.marb);
                r.ci_width_ratio = Some(r.ci_width / base.ci_width);
            }
        }
        rows.extend(group);
    }
    rows
}

/// Median and quartiles over replicates of the stage-one statistics.
pub fn s1_table(results: &ExperimentResults) -> BTreeMap<String, Spread> {
    let diags: Vec<S1Diagnostics> = results.replicates.iter().filter_map(|r| r.s1).collect();
    let mut out = BTreeMap::new();
    if diags.is_empty() {
        return out;
    }
    let cols: [(&str, fn(&S1Diagnostics) -> f64); 4] = [
        ("pct_unstable", |d| d.pct_unstable),
        ("alc", |d| d.alc),
        ("pct_var_increase", |d| d.pct_var_increase),
        ("pct_mab_reduction", |d| d.pct_mab_reduction),
    ];
    for (name, f) in cols {
        let v: Vec<f64> = diags.iter().map(f).collect();
        if let Ok(s) = spread(&v) {
            out.insert(name.to_string(), s);
        }
    }
    out
}

/// Frequentist bias/variance/MSE of posterior medians over all areas, per model.
pub fn frequentist_table(config: &ExperimentConfig, census: &CensusFrame, results: &ExperimentResults) -> BTreeMap<String, FreqMse> {
    let truth = census.true_mu();
    let mut out = BTreeMap::new();
    for model in &config.models {
        let meds: Vec<Vec<f64>> = results
            .replicates
            .iter()
            .flat_map(|r| r.medians.iter().filter(|(m, _)| m == model).map(|(_, v)| v.clone()))
            .collect();
        if let Ok(f) = freq_mse(&meds, &truth) {
            out.insert(model.to_string(), f);
        }
    }
    out
}

/// Rebuilds results from a metrics CSV; each replicate keeps only its rows.
pub fn read_metrics_csv<R: std::io::Read>(reader: R) -> Result<ExperimentResults> {
    let mut by_rep: BTreeMap<usize, ReplicateResult> = BTreeMap::new();
    for row in csv::Reader::from_reader(reader).deserialize::<MetricRow>() {
        let row = row?;
        by_rep.entry(row.replicate).or_default().rows.push(row);
    }
    Ok(ExperimentResults { replicates: by_rep.into_values().collect(), wall_clock_seconds: 0.0 })
}

pub fn write_comparison_csv<W: Write>(writer: W, table: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in table {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv<W: Write>(writer: W, results: &ExperimentResults) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in results.rows() {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: String,
    code_version: &'static str,
    replicates: usize,
    models: &'a [ModelKind],
    converged: usize,
    discarded: usize,
    failed: usize,
    runs: Vec<&'a ModelRun>,
    wall_clock_seconds: f64,
}

/// Writes `metrics.csv`, `comparison.csv`, `s1_summary.csv`, `summary.json`
/// and `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, census: &CensusFrame, results: &ExperimentResults) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_metrics_csv(std::fs::File::create(dir.join("metrics.csv"))?, results)?;

    let table = comparison_table(&config.scenario.name, &config.models, results);
    write_comparison_csv(std::fs::File::create(dir.join("comparison.csv"))?, &table)?;

    let s1 = s1_table(results);
    let mut w = csv::Writer::from_path(dir.join("s1_summary.csv"))?;
    w.write_record(["scenario", "statistic", "median", "q1", "q3"])?;
    for (name, s) in &s1 {
        w.write_record([&config.scenario.name, name, &s.median.to_string(), &s.q1.to_string(), &s.q3.to_string()])?;
    }
    w.flush()?;

    let summary = serde_json::json!({
        "scenario": config.scenario.name,
        "comparison": table,
        "stage_one": s1,
        "frequentist": frequentist_table(config, census, results),
        "surviving_replicates": config.models.iter().map(|m| {
            let n = results.runs().filter(|r| r.model == *m && r.status == FitStatus::Converged).count();
            (m.to_string(), n)
        }).collect::<BTreeMap<_, _>>(),
    });
    write_json(&dir.join("summary.json"), &summary)?;

    let manifest = Manifest {
        config_hash: config.hash(),
        code_version: env!("CARGO_PKG_VERSION"),
        replicates: config.replicates,
        models: &config.models,
        converged: results.count(FitStatus::Converged),
        discarded: results.count(FitStatus::Discarded),
        failed: results.count(FitStatus::Failed),
        runs: results.runs().collect(),
        wall_clock_seconds: results.wall_clock_seconds,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// The full record-noise grid.
pub const SIGMA_E_GRID: [f64; 13] = [0.01, 0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 3.5];

fn default_grid() -> Vec<f64> {
    SIGMA_E_GRID.to_vec()
}

fn default_effects() -> Vec<bool> {
    vec![true, false]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub scenario: ScenarioConfig,
    pub replicates: usize,
    #[serde(default = "default_grid")]
    pub sigma_e: Vec<f64>,
    #[serde(default = "default_effects")]
    pub area_effect: Vec<bool>,
    #[serde(default)]
    pub engine: SamplerConfig,
    /// Fit the stage-two model in every cell for the performance metrics.
    #[serde(default = "default_true")]
    pub stage2: bool,
    #[serde(default = "default_mass")]
    pub hdi_mass: f64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.replicates == 0 || self.sigma_e.is_empty() || self.area_effect.is_empty() {
            return Err(Error::config("the grid needs replicates, sigma_e values and area-effect options"));
        }
        if self.sigma_e.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config("sigma_e values must be positive"));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<(f64, bool)> {
        self.area_effect.iter().flat_map(|&ra| self.sigma_e.iter().map(move |&s| (s, ra))).collect()
    }
}

/// One grid cell of one replicate. Performance metrics cover all areas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub replicate: usize,
    pub sigma_e: f64,
    pub area_effect: bool,
    pub status: FitStatus,
    pub sr: Option<f64>,
    pub alc: Option<f64>,
    pub marb: Option<f64>,
    pub mrrmse: Option<f64>,
    pub coverage: Option<f64>,
    pub ci_width: Option<f64>,
}

fn grid_cell(
    config: &GridConfig,
    census: &CensusFrame,
    sample: &SurveySample,
    replicate: usize,
    cell: usize,
    (sigma_e, ra): (f64, bool),
) -> Result<GridRow> {
    let engine = config
        .engine
        .with_seed(derive_seed(config.engine.seed, &[purpose::REPLICATE, replicate as u64, cell as u64]));
    let weights = WeightSet::from_sample(sample);
    let s1 = fit_stage1(sample, &weights, &Stage1Spec::smoothing_probe(ra, sigma_e), &engine)?;
    let p = s1.probability_draws();
    let sr = smoothing_ratio(&p, sample, &weights)?;
    let summaries = build_s1_estimates(&p, sample, &weights, engine.seed)?;
    let direct = DirectEstimates::compute(sample, &weights)?;
    let alc = alc_from(&summaries, &direct)?;
    let mut row = GridRow {
        replicate,
        sigma_e,
        area_effect: ra,
        status: if s1.converged() { FitStatus::Converged } else { FitStatus::Discarded },
        sr: Some(sr),
        alc: Some(alc),
        marb: None,
        mrrmse: None,
        coverage: None,
        ci_width: None,
    };
    if config.stage2 {
        let s2_engine = engine.with_seed(derive_seed(engine.seed, &[purpose::STAGE_TWO]));
        let est = fit_stage2(&summaries, sample, &Stage2Spec::default(), &s2_engine)?;
        if !est.converged() {
            row.status = FitStatus::Discarded;
        }
        let scores = score_areas(&est, &census.true_mu(), config.hdi_mass)?;
        let n = scores.len() as f64;
        let widths: Vec<f64> = scores.iter().map(|s| s.width).collect();
        row.marb = Some(scores.iter().map(|s| s.arb).sum::<f64>() / n);
        row.mrrmse = Some(scores.iter().map(|s| s.rrmse).sum::<f64>() / n);
        row.coverage = Some(scores.iter().filter(|s| s.covered).count() as f64 / n);
        row.ci_width = Some(median(&widths));
    }
    Ok(row)
}

/// Runs every cell of every replicate; failed cells are kept with status `failed`.
pub fn run_grid(config: &GridConfig) -> Result<Vec<GridRow>> {
    config.validate()?;
    let census = census_for(&config.scenario)?;
    let cells = config.cells();
    let jobs: Vec<(usize, usize)> = (0..config.replicates).flat_map(|d| (0..cells.len()).map(move |c| (d, c))).collect();
    let samples: Vec<SurveySample> = (0..config.replicates)
        .map(|d| draw_informative_sample(&census, &config.scenario, d as u64))
        .collect::<Result<_>>()?;
    Ok(jobs
        .into_par_iter()
        .map(|(d, c)| {
            grid_cell(config, &census, &samples[d], d, c, cells[c]).unwrap_or_else(|e| {
                log::warn!("grid replicate {d} cell {c} failed: {e}");
                GridRow {
                    replicate: d,
                    sigma_e: cells[c].0,
                    area_effect: cells[c].1,
                    status: FitStatus::Failed,
                    sr: None,
                    alc: None,
                    marb: None,
                    mrrmse: None,
                    coverage: None,
                    ci_width: None,
                }
            })
        })
        .collect())
}

pub fn write_grid_csv<W: Write>(writer: W, rows: &[GridRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
