use super::*;
use crate::area::bym2::lattice_graph;
use crate::area::gvf::gvf_impute;
use crate::engine::LogDensity;
use crate::rng;
use crate::stage1::S1Area;
use crate::survey::{inv_logit, Record, Regions};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{Cauchy, Continuous, Normal as SNormal, StudentsT};

fn meta(m: usize) -> Vec<AreaMeta> {
    (0..m)
        .map(|i| AreaMeta { area_id: i as u32 + 1, population: Some(200 + 50 * i as u64), z: -1.0 + 0.3 * i as f64 })
        .collect()
}

fn s1_area(id: u32, n: usize, stable: bool, theta: Vec<f64>, subset: &[usize], gamma_bar: f64) -> S1Area {
    let t = theta.len() as f64;
    let mean = theta.iter().sum::<f64>() / t;
    let var_theta = theta.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1.0);
    S1Area {
        area_id: id,
        n,
        stable,
        psi_direct: 0.01,
        mu: theta.iter().map(|&x| inv_logit(x)).collect(),
        psi: vec![0.01; theta.len()],
        bias: vec![0.0; theta.len()],
        gamma: vec![gamma_bar; theta.len()],
        gamma_bar,
        var_theta,
        theta_subset: subset.iter().map(|&s| theta[s]).collect(),
        theta,
    }
}

/// Sampled areas `1..=sampled` with S1 draws around a linear trend in z;
/// area 2 is unstable.
fn fixture(m: usize, sampled: usize, t: usize, subset_size: usize, seed: u64) -> (Vec<AreaMeta>, S1Summaries) {
    let areas = meta(m);
    let mut r = rng::stream(seed, &[99]);
    let subset: Vec<usize> = {
        let mut s = rand::seq::index::sample(&mut r, t, subset_size).into_vec();
        s.sort_unstable();
        s
    };
    let s1 = areas[..sampled]
        .iter()
        .map(|a| {
            let centre = -1.0 + 0.5 * a.z + r.random_range(-0.2..0.2);
            let sd = 0.15;
            let noise = Normal::new(0.0, sd).unwrap();
            let theta: Vec<f64> = (0..t).map(|_| centre + noise.sample(&mut r)).collect();
            let n = 10 + 5 * a.area_id as usize;
            let gamma_bar = 0.2 / (n as f64).sqrt() * r.random_range(0.7..1.4);
            s1_area(a.area_id, n, a.area_id != 2, theta, &subset, gamma_bar)
        })
        .collect();
    (areas, S1Summaries { areas: s1, subset })
}

fn sample_for(areas: &[AreaMeta], sampled: usize) -> SurveySample {
    let records = (1..=sampled as u32)
        .flat_map(|id| {
            (0..4).map(move |k| Record { area_id: id, y: u8::from(k % 2 == 0), x_survey: 0, x_census: 0.0, w_raw: 1.0 })
        })
        .collect();
    SurveySample::new(records, areas.to_vec()).unwrap()
}

fn cfg(seed: u64) -> SamplerConfig {
    SamplerConfig { chains: 4, warmup: 500, draws: 500, seed, ..Default::default() }
}

#[test]
fn small_density_matches_term_by_term_sum() {
    let areas = meta(5);
    let subset = [0usize, 2, 3];
    let s1 = S1Summaries {
        areas: vec![
            s1_area(1, 20, true, vec![-0.5, -0.6, -0.45, -0.55], &subset, 0.04),
            s1_area(2, 6, false, vec![0.1, 0.3, 0.2, 0.25], &subset, 0.3),
            s1_area(3, 12, true, vec![-1.0, -0.8, -0.9, -1.1], &subset, 0.09),
            s1_area(4, 30, true, vec![0.4, 0.35, 0.5, 0.45], &subset, 0.03),
        ],
        subset: subset.to_vec(),
    };
    let model = stage2_model(&s1, &areas, &Stage2Spec::default()).unwrap();
    // [lambda0, lambda_z, log sigma, z_1..z_5, tb_1..tb_4, omega0, omega1, log sigma_gvf]
    let x = [-0.4, 0.3, -0.7, 0.5, -0.2, 1.1, 0.3, -0.6, -0.52, 0.22, -0.95, 0.41, -0.3, -0.4, -1.2];
    assert_eq!(model.dim(), x.len());
    let mut g = vec![0.0; x.len()];
    let got = model.log_density(&x, &mut g);

    let zbar = areas.iter().map(|a| a.z).sum::<f64>() / 5.0;
    let sigma = x[2].exp();
    let theta: Vec<f64> = (0..5).map(|i| x[0] + x[1] * (areas[i].z - zbar) + sigma * x[3 + i]).collect();
    let (w0, w1, sg) = (x[12], x[13], x[14].exp());
    let mut want = 0.0;
    for (k, a) in s1.areas.iter().enumerate() {
        let tb = x[8 + k];
        let meas = SNormal::new(tb, a.var_theta.sqrt()).unwrap();
        want += a.theta_subset.iter().map(|&t| meas.ln_pdf(t)).sum::<f64>() / a.theta_subset.len() as f64;
        let gamma = if a.stable {
            let l = SNormal::new(w0 + w1 * (a.n as f64).ln(), sg).unwrap();
            want += l.ln_pdf(0.5 * a.gamma_bar.ln());
            a.gamma_bar
        } else {
            (2.0 * (w0 + w1 * (a.n as f64).ln()) + 2.0 * sg * sg).exp()
        };
        want += SNormal::new(theta[k], gamma.sqrt()).unwrap().ln_pdf(tb);
    }
    want += StudentsT::new(0.0, 1.0, 3.0).unwrap().ln_pdf(x[0]);
    want += SNormal::new(0.0, 2.0).unwrap().ln_pdf(x[1]);
    want += (2.0 * SNormal::new(0.0, 2.0).unwrap().pdf(sigma)).ln() + x[2];
    for i in 0..5 {
        want += SNormal::new(0.0, 1.0).unwrap().ln_pdf(x[3 + i]);
    }
    want += SNormal::new(0.0, 2.0).unwrap().ln_pdf(w0) + SNormal::new(0.0, 2.0).unwrap().ln_pdf(w1);
    want += (2.0 * Cauchy::new(0.0, 2.0).unwrap().pdf(sg)).ln() + x[14];
    assert_close!(got, want, 1e-10);
}

#[test]
fn too_few_stable_areas_rejected() {
    let areas = meta(3);
    let s1 = S1Summaries {
        areas: vec![
            s1_area(1, 20, true, vec![-0.5, -0.6], &[0], 0.04),
            s1_area(2, 20, true, vec![-0.2, -0.3], &[0], 0.04),
        ],
        subset: vec![0],
    };
    assert!(stage2_model(&s1, &areas, &Stage2Spec::default()).is_err());
}

#[test]
fn single_draw_subset_reduces_to_one_gaussian() {
    let areas = meta(2);
    let s1 = S1Summaries { areas: vec![s1_area(1, 20, true, vec![-0.5, -0.7], &[1], 0.04)], subset: vec![1] };
    let Observation::Tsln { areas: obs, .. } = tsln_observation(&s1, &areas, GvfCorrection::Corrected).unwrap() else {
        unreachable!()
    };
    assert_eq!(obs[0].count, 1.0);
    assert_eq!(obs[0].sum, -0.7);
}

#[test]
fn imputation_only_for_unstable_sampled_areas() {
    let (areas, s1) = fixture(8, 5, 40, 20, 1);
    let Observation::Tsln { areas: obs, .. } = tsln_observation(&s1, &areas, GvfCorrection::Corrected).unwrap() else {
        unreachable!()
    };
    assert_eq!(obs.len(), 5);
    let unstable: Vec<usize> = obs.iter().filter(|o| !o.stable).map(|o| o.pos).collect();
    assert_eq!(unstable, vec![1]);
    assert!(obs.iter().all(|o| o.pos < 5));
}

#[test]
fn correction_switch_is_inert_without_unstable_areas() {
    let (areas, mut s1) = fixture(6, 4, 40, 20, 2);
    for a in &mut s1.areas {
        a.stable = true;
    }
    let spec = |c| Stage2Spec { gvf_correction: c, ..Default::default() };
    let a = stage2_model(&s1, &areas, &spec(GvfCorrection::Corrected)).unwrap();
    let b = stage2_model(&s1, &areas, &spec(GvfCorrection::Naive)).unwrap();
    let x: Vec<f64> = (0..a.dim()).map(|k| 0.1 * (k as f64).sin()).collect();
    let (mut ga, mut gb) = (vec![0.0; x.len()], vec![0.0; x.len()]);
    assert_eq!(a.log_density(&x, &mut ga), b.log_density(&x, &mut gb));
    assert_eq!(ga, gb);

    s1.areas[0].stable = false;
    let a = stage2_model(&s1, &areas, &spec(GvfCorrection::Corrected)).unwrap();
    let b = stage2_model(&s1, &areas, &spec(GvfCorrection::Naive)).unwrap();
    assert_ne!(a.log_density(&x, &mut ga), b.log_density(&x, &mut gb));
}

#[test]
fn imputed_variance_example() {
    assert_close!(gvf_impute([-1.5, 0.0], 0.2, 30.0, GvfCorrection::Corrected), (-2.92f64).exp(), 1e-15);
}

#[test]
fn posterior_sd_invariant_to_subset_size() {
    let t = 400;
    let (areas, s1_half) = fixture(8, 6, t, t / 2, 3);
    let mut s1_quarter = s1_half.clone();
    let mut r = rng::stream(4, &[1]);
    let mut sub = rand::seq::index::sample(&mut r, t, t / 4).into_vec();
    sub.sort_unstable();
    for a in &mut s1_quarter.areas {
        a.theta_subset = sub.iter().map(|&s| a.theta[s]).collect();
    }
    s1_quarter.subset = sub;
    let sample = sample_for(&areas, 6);
    let spec = Stage2Spec::default();
    let half = fit_stage2(&s1_half, &sample, &spec, &cfg(5)).unwrap();
    let quarter = fit_stage2(&s1_quarter, &sample, &spec, &cfg(5)).unwrap();
    for i in 0..6 {
        let sd = |e: &AreaEstimates| {
            let d: Vec<f64> = e.mu_draws(i).iter().map(|&p| crate::survey::logit(p)).collect();
            let m = d.iter().sum::<f64>() / d.len() as f64;
            (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / d.len() as f64).sqrt()
        };
        let (a, b) = (sd(&half), sd(&quarter));
        assert!((a - b).abs() / a < 0.1, "area {i}: sd {a} vs {b}");
    }
}

#[test]
fn bym2_with_rho_zero_matches_non_spatial() {
    let (areas, s1) = fixture(8, 6, 200, 100, 6);
    let sample = sample_for(&areas, 6);
    let flat = fit_stage2(&s1, &sample, &Stage2Spec::default(), &cfg(7)).unwrap();
    let spatial = Stage2Spec {
        spatial: Some(SpatialSpec { graph: lattice_graph(2, 4).unwrap(), rho: RhoPrior::Fixed(0.0) }),
        ..Default::default()
    };
    let bym = fit_stage2(&s1, &sample, &spatial, &cfg(7)).unwrap();
    let a = flat.summaries(0.95).unwrap();
    let b = bym.summaries(0.95).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x.median - y.median).abs() < 0.02, "{x:?} vs {y:?}");
    }
}

#[test]
fn benchmark_pulls_aggregate_towards_target() {
    let (areas, s1) = fixture(8, 6, 200, 100, 8);
    let sample = sample_for(&areas, 6);
    let pops: Vec<f64> = areas.iter().map(|a| a.population.unwrap() as f64).collect();
    let regions = Regions { names: vec!["all".into()], members: vec![(0..8).collect()] };
    let target = 0.45;
    let plain = fit_stage2(&s1, &sample, &Stage2Spec::default(), &cfg(9)).unwrap();
    let spec = Stage2Spec {
        benchmark: Some(BenchmarkSpec { regions: regions.clone(), c_hat: vec![target], var: vec![0.0004], epsilon: 0.3 }),
        ..Default::default()
    };
    let bench = fit_stage2(&s1, &sample, &spec, &cfg(9)).unwrap();
    let gap = |e: &AreaEstimates| {
        let med: Vec<f64> = e.summaries(0.95).unwrap().iter().map(|s| s.median).collect();
        let agg = crate::survey::aggregate_to_region(&med, &pops, &regions).unwrap()[0];
        (agg - target).abs()
    };
    assert!(gap(&bench) < gap(&plain), "{} vs {}", gap(&bench), gap(&plain));
}

#[test]
fn all_areas_estimated_with_draws_in_unit_interval() {
    let (areas, s1) = fixture(8, 5, 100, 50, 10);
    let sample = sample_for(&areas, 5);
    let fit = fit_stage2(&s1, &sample, &Stage2Spec::default(), &cfg(11)).unwrap();
    assert_eq!(fit.m(), 8);
    assert_eq!(fit.sampled, vec![true, true, true, true, true, false, false, false]);
    assert_eq!(fit.stable, vec![true, false, true, true, true, false, false, false]);
    for i in 0..8 {
        assert!(fit.mu_draws(i).iter().all(|&p| p > 0.0 && p < 1.0));
    }
    assert!(fit.converged(), "max R-hat {}", fit.max_rhat());
}

#[test]
fn benchmark_requires_populations() {
    let (mut areas, s1) = fixture(5, 4, 20, 10, 12);
    areas[0].population = None;
    let regions = Regions { names: vec!["r".into()], members: vec![vec![0, 1]] };
    let spec = Stage2Spec {
        benchmark: Some(BenchmarkSpec { regions, c_hat: vec![0.3], var: vec![0.001], epsilon: 1.0 }),
        ..Default::default()
    };
    assert!(matches!(stage2_model(&s1, &areas, &spec), Err(Error::CensusRequired)));
}
