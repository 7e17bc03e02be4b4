//! Acceptance gate: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach the terminal.

use rand::seq::index;
use rand::Rng;
use std::path::Path;
use std::time::Instant;
use tsln_cli::{cmd_replicate, ReplicateArgs};
use tsln_core::area::benchmark::{exact_benchmark, regional_direct, BenchmarkSpec};
use tsln_core::area::bym2::{bym2_contribution, lattice_graph, RhoPrior};
use tsln_core::area::gvf::GvfCorrection;
use tsln_core::area::{AreaModel, LinkingSpec};
use tsln_core::baselines::{beta_observation, beta_precision, bin_observation, eln_observation, log_spec};
use tsln_core::engine::{check_gradients_at_random_points, sample, split_rhat, LogDensity, SamplerConfig};
use tsln_core::experiment::{run_grid, FitStatus, GridConfig, MetricRow};
use tsln_core::rng::stream;
use tsln_core::sim::{census_for, draw_informative_sample, CensusFrame, ScenarioConfig};
use tsln_core::stage1::{alc, build_s1_estimates, smoothing_ratio, Stage1Model, Stage1Spec};
use tsln_core::stage2::{stage2_model, SpatialSpec, Stage2Spec};
use tsln_core::survey::{
    empirical_logit, hajek_estimate, inv_logit, overall_prevalence, AreaMeta, DirectEstimates, Record, Regions,
    SurveySample, WeightSet,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// `(1/n)(1 - n/N)(1/(n-1)) sum w^2 r^2`, written out independently.
fn design_variance(w: &[f64], r: &[f64], population: f64) -> f64 {
    let n = w.len() as f64;
    let ss: f64 = w.iter().zip(r).map(|(w, r)| w * w * r * r).sum();
    (1.0 - n / population) / (n * (n - 1.0)) * ss
}

/// Five areas of six records with both outcomes present in each.
fn mixed_sample(seed: u64) -> SurveySample {
    let mut rng = stream(seed, &[1]);
    let mut records = Vec::new();
    for area in 1..=5u32 {
        for j in 0..6 {
            records.push(Record {
                area_id: area,
                y: u8::from(j % 3 == 0),
                x_survey: (j % 3) as u8 + 1,
                x_census: rng.random_range(-1.0..1.0),
                w_raw: rng.random_range(0.5..5.0),
            });
        }
    }
    let areas = (1..=5u32)
        .map(|i| AreaMeta { area_id: i, population: Some(100 * u64::from(i)), z: f64::from(i) / 5.0 })
        .collect();
    SurveySample::new(records, areas).unwrap()
}

fn desk_sample() -> SurveySample {
    let cfg = ScenarioConfig::desk_scale("sc3", 1).unwrap();
    let census = census_for(&cfg).unwrap();
    draw_informative_sample(&census, &cfg, 0).unwrap()
}

fn random_p_draws(sample: &SurveySample, t: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, &[2]);
    (0..t).map(|_| (0..sample.len()).map(|_| rng.random_range(0.02..0.98)).collect()).collect()
}

fn criterion_1() -> Outcome {
    let sample = desk_sample();
    let weights = WeightSet::from_sample(&sample);
    let p = random_p_draws(&sample, 40, 3);
    let s1 = build_s1_estimates(&p, &sample, &weights, 9).map_err(|e| e.to_string())?;
    let records = sample.records();
    let mut worst_dec = 0.0f64;
    for a in &s1.areas {
        let idx = sample.area_records(a.area_id);
        let w: Vec<f64> = idx.iter().map(|&j| weights.w_area[j]).collect();
        let y: Vec<f64> = idx.iter().map(|&j| f64::from(records[j].y)).collect();
        let pop = sample.area(a.area_id).population.unwrap() as f64;
        let n = w.len() as f64;
        let mu_d = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / n;
        let psi_d = design_variance(&w, &y.iter().map(|y| y - mu_d).collect::<Vec<_>>(), pop);
        for (t, draw) in p.iter().enumerate() {
            let r: Vec<f64> = idx.iter().zip(&y).map(|(&j, y)| draw[j] - y).collect();
            worst_dec = worst_dec.max((a.psi[t] - (psi_d + design_variance(&w, &r, pop))).abs());
        }
    }

    let mut rng = stream(11, &[3]);
    let m = 12;
    let population: Vec<f64> = (0..m).map(|_| rng.random_range(500.0..3000.0)).collect();
    let regions = Regions::contiguous_blocks(m, 3);
    let c_hat = [0.2, 0.3, 0.25];
    let mut draws: Vec<Vec<f64>> = (0..200).map(|_| (0..m).map(|_| rng.random_range(0.05..0.5)).collect()).collect();
    let clamped = exact_benchmark(&mut draws, &population, &regions, &c_hat).map_err(|e| e.to_string())?;
    let mut worst_bench = 0.0f64;
    for d in &draws {
        for (members, c) in regions.members.iter().zip(c_hat) {
            let num: f64 = members.iter().map(|&i| d[i] * population[i]).sum();
            let den: f64 = members.iter().map(|&i| population[i]).sum();
            worst_bench = worst_bench.max((num / den - c).abs());
        }
    }

    let mut worst_rt = 0.0f64;
    let mut worst_phi = 0.0f64;
    for _ in 0..1000 {
        let mu: f64 = rng.random_range(0.01..0.99);
        let q = mu * (1.0 - mu);
        let psi = rng.random_range(1e-4..0.95) * q;
        let (theta, gamma) = empirical_logit(mu, psi).map_err(|e| e.to_string())?;
        worst_rt = worst_rt.max((inv_logit(theta) - mu).abs());
        worst_rt = worst_rt.max((gamma * q * q - psi).abs());
        let phi = beta_precision(mu, psi);
        let (a, b) = (mu * phi, (1.0 - mu) * phi);
        let beta_mean = a / (a + b);
        let beta_var = a * b / ((a + b).powi(2) * (a + b + 1.0));
        worst_phi = worst_phi.max((beta_mean - mu).abs()).max((beta_var - psi).abs() / psi);
    }
    let detail = format!(
        "decomposition {worst_dec:.1e}, benchmark {worst_bench:.1e} ({clamped} clamped), logit round trip {worst_rt:.1e}, beta moments {worst_phi:.1e}"
    );
    check(worst_dec <= 1e-12 && worst_bench <= 1e-12 && clamped == 0 && worst_rt <= 1e-12 && worst_phi <= 1e-10, detail)
}

fn criterion_2() -> Outcome {
    let sample = mixed_sample(4);
    let weights = WeightSet::from_sample(&sample);
    let y: Vec<f64> = sample.records().iter().map(|r| f64::from(r.y)).collect();
    let p = vec![y.clone(); 6];
    let s1 = build_s1_estimates(&p, &sample, &weights, 1).map_err(|e| e.to_string())?;
    let direct = DirectEstimates::compute(&sample, &weights).map_err(|e| e.to_string())?;
    let mut exact = s1.areas.len() == direct.areas.len();
    for a in &s1.areas {
        let d = direct.get(a.area_id).unwrap();
        exact &= a.mu.iter().all(|&m| m == d.mu);
        exact &= a.psi.iter().all(|&s| Some(s) == d.psi);
    }

    let sr_one = smoothing_ratio(&p, &sample, &weights).map_err(|e| e.to_string())?;
    let overall = overall_prevalence(&sample, &weights);
    let flat = vec![vec![overall; sample.len()]; 6];
    let sr_zero = smoothing_ratio(&flat, &sample, &weights).map_err(|e| e.to_string())?;

    let theta = [-1.2, -0.3, 0.1, 0.8, 1.5];
    let alc_one = alc(&theta, &theta, &[0.1, 0.2, 0.05, 0.3, 0.15]).map_err(|e| e.to_string())?;

    let graph = lattice_graph(3, 4).map_err(|e| e.to_string())?;
    let mut rng = stream(6, &[4]);
    let s: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let u: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sigma = 0.7;
    let (d0, _) = bym2_contribution(&s, &u, 0.0, sigma, &graph);
    let (d1, _) = bym2_contribution(&s, &u, 1.0, sigma, &graph);
    let mut bym = 0.0f64;
    for i in 0..12 {
        bym = bym.max((d0[i] - sigma * u[i]).abs());
        bym = bym.max((d1[i] - sigma * s[i] / graph.kappa_of(i).sqrt()).abs());
    }
    let detail = format!("S1==direct {exact}, SR {sr_one} / {sr_zero}, ALC {alc_one}, BYM2 limits {bym:.1e}");
    check(exact && sr_one == 1.0 && sr_zero == 0.0 && (alc_one - 1.0).abs() < 1e-12 && bym < 1e-12, detail)
}

/// `y_k ~ N(theta, 1)`, `theta ~ N(0, 2^2)`.
struct NormalNormal {
    y: Vec<f64>,
}

impl LogDensity for NormalNormal {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let th = x[0];
        let lp = -0.125 * th * th - 0.5 * self.y.iter().map(|y| (y - th).powi(2)).sum::<f64>();
        grad[0] = -0.25 * th + self.y.iter().map(|y| y - th).sum::<f64>();
        lp
    }

    fn param_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }
}

fn criterion_3() -> Outcome {
    let y = vec![0.3, 1.1, -0.4, 0.9, 1.7, 0.2, 0.6, 1.3, -0.1, 0.8];
    let precision = 0.25 + y.len() as f64;
    let exact_mean = y.iter().sum::<f64>() / precision;
    let exact_sd = precision.recip().sqrt();
    let post = sample(&NormalNormal { y }, &SamplerConfig { seed: 17, draws: 2000, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let d = post.pooled(0);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() as f64 - 1.0)).sqrt();
    let conj = (mean - exact_mean).abs() <= 0.03 && (sd - exact_sd).abs() <= 0.03;

    let sample_ = desk_sample();
    let weights = WeightSet::from_sample(&sample_);
    let direct = DirectEstimates::compute(&sample_, &weights).map_err(|e| e.to_string())?;
    let s1 = build_s1_estimates(&random_p_draws(&sample_, 20, 5), &sample_, &weights, 2).map_err(|e| e.to_string())?;
    let areas = sample_.areas();
    let m = areas.len();
    let (regions, c_hat, var) = regional_direct(&sample_, &Regions::contiguous_blocks(m, 4)).map_err(|e| e.to_string())?;
    let spatial = Stage2Spec {
        spatial: Some(SpatialSpec { graph: lattice_graph(5, 8).map_err(|e| e.to_string())?, rho: RhoPrior::default() }),
        benchmark: Some(BenchmarkSpec { regions, c_hat, var, epsilon: 0.5 }),
        ..Stage2Spec::default()
    };
    let err = |e: tsln_core::Error| e.to_string();
    let models: Vec<(&str, Box<dyn LogDensity>)> = vec![
        ("TSLN-S1", Box::new(Stage1Model::new(&sample_, &weights, &Stage1Spec::tsln()).map_err(err)?)),
        ("S1 with record noise", Box::new(Stage1Model::new(&sample_, &weights, &Stage1Spec::smoothing_probe(true, 0.5)).map_err(err)?)),
        ("LOG", Box::new(Stage1Model::new(&sample_, &weights, &log_spec()).map_err(err)?)),
        ("TSLN-S2", Box::new(stage2_model(&s1, areas, &Stage2Spec::default()).map_err(err)?)),
        ("TSLN-S2 BYM2+bench", Box::new(stage2_model(&s1, areas, &spatial).map_err(err)?)),
        ("ELN", Box::new(AreaModel::new(areas, LinkingSpec::iid(2.0), eln_observation(&direct, GvfCorrection::Corrected)).map_err(err)?)),
        ("BIN", Box::new(AreaModel::new(areas, LinkingSpec::iid(1.0), bin_observation(&sample_)).map_err(err)?)),
        ("BETA", Box::new(AreaModel::new(areas, LinkingSpec::iid(2.0), beta_observation(&sample_, &direct).map_err(err)?).map_err(err)?)),
    ];
    let mut worst = 0.0f64;
    let mut worst_name = "";
    for (name, model) in &models {
        let e = check_gradients_at_random_points(model.as_ref(), 10, 23).map_err(|e| format!("{name}: {e}"))?;
        if e > worst {
            worst = e;
            worst_name = name;
        }
    }

    let mut rng = stream(8, &[5]);
    let chains: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..1000).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
        .collect();
    let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
    let rhat = split_rhat(&refs).map_err(|e| e.to_string())?;
    let detail = format!(
        "conjugate mean {mean:.4} vs {exact_mean:.4}, sd {sd:.4} vs {exact_sd:.4}; worst gradient error {worst:.1e} ({worst_name}, {} models); iid R-hat {rhat:.4}",
        models.len()
    );
    check(conj && worst < 1e-4 && (0.99..=1.01).contains(&rhat), detail)
}

/// Capped size-proportional inclusion probabilities, computed by brute
/// iteration until no unit exceeds one.
fn capped_inclusion(sizes: &[f64], n: usize) -> Vec<f64> {
    let mut certain = vec![false; sizes.len()];
    loop {
        let left = (n - certain.iter().filter(|c| **c).count()) as f64;
        let mass: f64 = sizes.iter().zip(&certain).filter(|(_, c)| !**c).map(|(s, _)| s).sum();
        let pi: Vec<f64> = sizes.iter().zip(&certain).map(|(s, &c)| if c { 1.0 } else { left * s / mass }).collect();
        let mut changed = false;
        for (k, p) in pi.iter().enumerate() {
            if !certain[k] && *p >= 1.0 {
                certain[k] = true;
                changed = true;
            }
        }
        if !changed {
            return pi;
        }
    }
}

fn criterion_4() -> Outcome {
    let mut rng = stream(31, &[6]);
    let big_n = 400;
    let pop: Vec<u8> = (0..big_n).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
    let truth = pop.iter().map(|&y| f64::from(y)).sum::<f64>() / big_n as f64;
    let reps = 2000;
    let n = 20;
    let est: Vec<f64> = (0..reps)
        .map(|_| {
            let idx = index::sample(&mut rng, big_n, n).into_vec();
            let y: Vec<u8> = idx.iter().map(|&j| pop[j]).collect();
            hajek_estimate(&y, &vec![1.0; n]).unwrap()
        })
        .collect();
    let mean = est.iter().sum::<f64>() / reps as f64;
    let se = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt() / (reps as f64).sqrt();
    let unbiased = (mean - truth).abs() <= 4.0 * se;

    // One 50-person area; x_census carries the person index.
    let persons = 50;
    let ys: Vec<u8> = (0..persons).map(|j| u8::from(j % 5 < 2)).collect();
    let records: Vec<Record> = (0..persons)
        .map(|j| Record { area_id: 1, y: ys[j], x_survey: 1, x_census: j as f64, w_raw: 1.0 })
        .collect();
    let census = CensusFrame::from_records(&[AreaMeta { area_id: 1, population: None, z: 0.0 }], &records)
        .map_err(|e| e.to_string())?;
    let mut cfg = ScenarioConfig::preset("sc3", 1, 1, 5).map_err(|e| e.to_string())?;
    cfg.sampling_fraction = 0.2;
    let take = cfg.area_sample_size(persons as u64) as usize;
    let draws = 20_000;
    let mut hits = vec![0.0; persons];
    for d in 0..draws {
        let s = draw_informative_sample(&census, &cfg, d as u64).map_err(|e| e.to_string())?;
        for r in s.records() {
            hits[r.x_census as usize] += 1.0;
        }
    }
    let empirical: Vec<f64> = hits.iter().map(|h| h / draws as f64).collect();

    let oracle_draws = 50_000;
    let mut oracle = vec![0.0; persons];
    let mut orng = stream(77, &[7]);
    for _ in 0..oracle_draws {
        let sizes: Vec<f64> = ys
            .iter()
            .map(|&y| f64::from(u8::from(y == 0)) + 0.8 * -(1.0 - orng.random::<f64>()).ln())
            .collect();
        for (o, p) in oracle.iter_mut().zip(capped_inclusion(&sizes, take)) {
            *o += p / oracle_draws as f64;
        }
    }
    let mut worst_z = 0.0f64;
    for j in 0..persons {
        let se = (oracle[j] * (1.0 - oracle[j]) / draws as f64).sqrt() + 1e-3;
        worst_z = worst_z.max((empirical[j] - oracle[j]).abs() / se);
    }
    let group = |v: &[f64], y: u8| {
        let sel: Vec<f64> = (0..persons).filter(|&j| ys[j] == y).map(|j| v[j]).collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    };
    let (e0, e1, o0, o1) = (group(&empirical, 0), group(&empirical, 1), group(&oracle, 0), group(&oracle, 1));
    let detail = format!(
        "SRS Hajek mean {mean:.4} vs truth {truth:.4} (se {se:.4}); inclusion y=0 {e0:.3} vs y=1 {e1:.3}, oracle {o0:.3} vs {o1:.3}, worst z {worst_z:.2}"
    );
    check(unbiased && e0 > e1 && o0 > o1 && worst_z <= 4.0, detail)
}

fn metric_values(rows: &[MetricRow], model: &str, group: &str, metric: &str) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.model == model && r.sampled == group && r.metric == metric)
        .map(|r| r.value)
        .collect()
}

fn read_rows(path: &Path) -> Vec<MetricRow> {
    csv::Reader::from_path(path).unwrap().deserialize().map(Result::unwrap).collect()
}

fn replicate_args(out: &Path, replicates: Option<usize>) -> ReplicateArgs {
    ReplicateArgs {
        config: None,
        scenario: Some("sc3".into()),
        full_scale: false,
        replicates,
        models: Some(vec!["TSLN".into(), "ELN".into(), "BIN".into()]),
        sampler: Default::default(),
        stage2: Default::default(),
        out: Some(out.to_path_buf()),
    }
}

fn criteria_5_and_6(dir: &Path) -> (Outcome, Outcome) {
    let out = dir.join("desk-sc3");
    let (cfg, results) = match cmd_replicate(&replicate_args(&out, None)) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let rows = read_rows(&out.join("metrics.csv"));
    let med = |model: &str, metric: &str| {
        let v = metric_values(&rows, model, "sampled", metric);
        if v.is_empty() {
            f64::NAN
        } else {
            median(&v)
        }
    };
    let cov = metric_values(&rows, "TSLN", "sampled", "coverage");
    let cnt = metric_values(&rows, "TSLN", "sampled", "n_areas");
    let coverage = cov.iter().zip(&cnt).map(|(c, n)| c * n).sum::<f64>() / cnt.iter().sum::<f64>();
    let (rr_t, rr_e, rr_b) = (med("TSLN", "mrrmse"), med("ELN", "mrrmse"), med("BIN", "mrrmse"));
    let (w_t, w_e) = (med("TSLN", "ci_width"), med("ELN", "ci_width"));
    let used = |m: &str| metric_values(&rows, m, "sampled", "mrrmse").len();
    let c5 = format!(
        "M={} D={} (TSLN/ELN/BIN used {}/{}/{}): MRRMSE TSLN {rr_t:.3} ELN {rr_e:.3} BIN {rr_b:.3}; TSLN coverage {coverage:.3}; CI width TSLN {w_t:.3} ELN {w_e:.3}",
        cfg.scenario.areas,
        cfg.replicates,
        used("TSLN"),
        used("ELN"),
        used("BIN")
    );
    let ok5 = rr_t < rr_e && rr_t < rr_b && (0.78..=0.98).contains(&coverage) && w_t < w_e;

    let s1 = |m: &str| median(&metric_values(&rows, "TSLN-S1", "sampled", m));
    let (unstable, mab, var) = (s1("pct_unstable"), s1("pct_mab_reduction"), s1("pct_var_increase"));
    let c6 = format!(
        "median unstable {unstable:.1}%, MAB reduction {mab:.1}%, variance increase {var:.1}%, ALC {:.2} ({} replicates)",
        s1("alc"),
        metric_values(&rows, "TSLN-S1", "sampled", "alc").len()
    );
    let ok6 = (15.0..=35.0).contains(&unstable) && mab > 0.0 && var > 0.0;
    eprintln!("  desk run: {:.1} s wall clock", results.wall_clock_seconds);
    (check(ok5, c5), check(ok6, c6))
}

fn criterion_7() -> Outcome {
    let cfg = GridConfig {
        scenario: ScenarioConfig::desk_scale("suppe", 1).map_err(|e| e.to_string())?,
        replicates: 20,
        sigma_e: vec![0.01, 0.5, 1.0, 2.0, 3.5],
        area_effect: vec![true, false],
        engine: SamplerConfig::default(),
        stage2: false,
        hdi_mass: 0.95,
        output: "unused".into(),
    };
    let rows = run_grid(&cfg).map_err(|e| e.to_string())?;
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.status == FitStatus::Converged)
        .filter_map(|r| Some((r.sr?, r.alc?)))
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let above = pts.iter().filter(|(sr, alc)| alc >= sr).count() as f64 / n;
    let detail = format!(
        "{} of {} cells converged; slope of ALC on SR {slope:.3}; ALC >= SR in {:.1}% of cells",
        pts.len(),
        rows.len(),
        100.0 * above
    );
    check(slope > 0.0 && above >= 0.9 && pts.len() >= rows.len() / 2, detail)
}

fn criterion_8(dir: &Path) -> Outcome {
    let a = dir.join("det-a");
    let b = dir.join("det-b");
    for out in [&a, &b] {
        cmd_replicate(&replicate_args(out, Some(3))).map_err(|e| e.to_string())?;
    }
    let (fa, fb) = (std::fs::read(a.join("metrics.csv")).unwrap(), std::fs::read(b.join("metrics.csv")).unwrap());
    check(fa == fb && !fa.is_empty(), format!("two runs, {} and {} bytes, identical: {}", fa.len(), fb.len(), fa == fb))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    let mut report = |n: usize, name: &str, start: Instant, outcome: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} {tag}: {name} [{secs:.1} s] {detail}");
    };
    let t = Instant::now();
    report(1, "identity suite", t, criterion_1());
    let t = Instant::now();
    report(2, "limit suite", t, criterion_2());
    let t = Instant::now();
    report(3, "engine validity", t, criterion_3());
    let t = Instant::now();
    report(4, "design properties", t, criterion_4());
    let t = Instant::now();
    let (c5, c6) = criteria_5_and_6(dir.path());
    report(5, "desk-scale model ordering", t, c5);
    report(6, "stage-one summary ranges", t, c6);
    let t = Instant::now();
    report(7, "smoothing grid ALC vs SR", t, criterion_7());
    let t = Instant::now();
    report(8, "determinism", t, criterion_8(dir.path()));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 8 acceptance criteria passed");
}
