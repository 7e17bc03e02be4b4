//! Comparison models: the census-aggregated pseudo-likelihood logistic model
//! (LOG) and the area-level binomial (BIN), Beta (BETA) and empirical-logit
//! normal (ELN) models.

use crate::area::gvf::{BetaGvf, GvfCorrection, MAX_BETA_PSI};
use crate::area::{
    AreaEstimates, AreaModel, BetaBounds, BetaObs, BinObs, ElnObs, LinkingSpec, ModelKind, Observation,
};
use crate::engine::{self, PosteriorMatrix, SamplerConfig};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, purpose};
use crate::sim::CensusFrame;
use crate::stage1::{fit_stage1, Stage1Spec};
use crate::survey::{inv_logit, logit, perturb_unstable, DirectEstimates, SurveySample, WeightSet, DEFAULT_PERTURBATION};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

/// Mean bounds of the Beta model.
pub const BETA_MU_FLOOR: f64 = 0.03;
/// Scale of the half-normal prior on the area-effect sd of the BIN and LOG models.
pub const UNIT_SD_PRIOR: f64 = 1.0;
/// Same for the BETA and ELN models.
pub const WIDE_SD_PRIOR: f64 = 2.0;

fn model_seed(config: &SamplerConfig, kind: ModelKind) -> SamplerConfig {
    config.with_seed(derive_seed(config.seed, &[purpose::BASELINE, kind as u64]))
}

fn estimates(kind: ModelKind, sample: &SurveySample, stable: Vec<bool>, posterior: PosteriorMatrix) -> AreaEstimates {
    let areas = sample.areas();
    AreaEstimates {
        model: kind,
        area_ids: areas.iter().map(|a| a.area_id).collect(),
        sampled: areas.iter().map(|a| sample.is_sampled(a.area_id)).collect(),
        stable,
        posterior,
    }
}

fn direct_stability(sample: &SurveySample, direct: &DirectEstimates) -> Vec<bool> {
    sample.areas().iter().map(|a| direct.get(a.area_id).is_some_and(|d| d.stable)).collect()
}

/// Index of an area in `sample.areas()`, which covers ids `1..=M` in order.
fn position(area_id: u32) -> usize {
    area_id as usize - 1
}

/// Covariates of the LOG model: census covariate, area covariate and an area effect.
pub fn log_spec() -> Stage1Spec {
    Stage1Spec { x_survey: false, ..Stage1Spec::tsln() }
}

/// LOG: pseudo-likelihood logistic model, then per draw
/// `mu_i = (sum of sampled y + sum of predicted p over the unsampled) / N_i`.
pub fn fit_log(sample: &SurveySample, census: &CensusFrame, config: &SamplerConfig) -> Result<AreaEstimates> {
    if census.areas.len() != sample.total_areas() {
        return Err(Error::invalid("census and sample cover different areas"));
    }
    for (c, a) in census.areas.iter().zip(sample.areas()) {
        if c.area_id != a.area_id || a.population.is_some_and(|n| n != c.population) {
            return Err(Error::invalid(format!("census and sample disagree on area {}", c.area_id)));
        }
    }
    let config = model_seed(config, ModelKind::Log);
    let weights = WeightSet::from_sample(sample);
    let fit = fit_stage1(sample, &weights, &log_spec(), &config)?;
    let model = &fit.model;
    let draws: Vec<&[f64]> = fit.posterior.iter_draws().collect();
    let m = census.areas.len();

    // Sampled individuals are part of the census, so the unsampled sum is
    // the census-wide sum minus the sum over the sampled records.
    let records = sample.records();
    let rows: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|k| {
            let z = census.areas[k].z;
            let mut buf = Vec::new();
            census
                .area_records(k)
                .map(|r| {
                    model.design.row(&r, z, &mut buf);
                    buf.clone()
                })
                .collect()
        })
        .collect();
    let sample_rows: Vec<Vec<Vec<f64>>> = census
        .areas
        .iter()
        .map(|a| {
            let mut buf = Vec::new();
            sample
                .area_records(a.area_id)
                .iter()
                .map(|&j| {
                    model.design.row(&records[j], a.z, &mut buf);
                    buf.clone()
                })
                .collect()
        })
        .collect();
    let y_sum: Vec<f64> = census
        .areas
        .iter()
        .map(|a| sample.area_records(a.area_id).iter().map(|&j| f64::from(records[j].y)).sum())
        .collect();

    let mu: Vec<Vec<f64>> = draws
        .par_iter()
        .enumerate()
        .map(|(t, draw)| {
            let beta = model.coefficients(draw);
            let sigma = model.effect_sd(draw).unwrap_or(0.0);
            let mut prng = rng::stream(config.seed, &[purpose::PREDICT, t as u64]);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            (0..m)
                .map(|k| {
                    let a = &census.areas[k];
                    let effect = match model.area_effect(draw, a.area_id) {
                        Some(e) => e,
                        None => sigma * normal.sample(&mut prng),
                    };
                    let p = |row: &Vec<f64>| inv_logit(row.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>() + effect);
                    let all: Vec<f64> = rows[k].iter().map(p).collect();
                    let seen: Vec<f64> = sample_rows[k].iter().map(p).collect();
                    log_area_estimate(y_sum[k], &all, &seen, a.population as f64)
                })
                .collect()
        })
        .collect();

    let coef_names: Vec<String> = fit.posterior.names().iter().take(model.monitored().len()).cloned().collect();
    let mut names: Vec<String> = census.areas.iter().map(|a| format!("mu[{}]", a.area_id)).collect();
    names.extend(coef_names.iter().cloned());
    let nc = coef_names.len();
    let mut values = Vec::with_capacity(draws.len() * names.len());
    for (d, mu_t) in draws.iter().zip(&mu) {
        values.extend_from_slice(mu_t);
        values.extend_from_slice(&d[..nc]);
    }
    let mut posterior =
        PosteriorMatrix::new(names, fit.posterior.chains(), fit.posterior.draws_per_chain(), values);
    posterior.diagnostics = fit.posterior.diagnostics.clone();
    let direct = DirectEstimates::compute(sample, &weights)?;
    Ok(estimates(ModelKind::Log, sample, direct_stability(sample, &direct), posterior))
}

/// `(sampled y + census p - sampled p) / N`: the observed outcomes plus the
/// predictions for everyone in the area who was not sampled.
pub fn log_area_estimate(sampled_y: f64, census_p: &[f64], sampled_p: &[f64], population: f64) -> f64 {
    let unseen = census_p.iter().sum::<f64>() - sampled_p.iter().sum::<f64>();
    ((sampled_y + unseen) / population).clamp(0.0, 1.0)
}

/// BIN: unweighted binomial counts with a logit linking model.
pub fn bin_observation(sample: &SurveySample) -> Observation {
    let records = sample.records();
    let areas = sample
        .sampled_areas()
        .into_iter()
        .map(|id| {
            let idx = sample.area_records(id);
            BinObs {
                pos: position(id),
                y: idx.iter().map(|&j| f64::from(records[j].y)).sum(),
                n: idx.len() as f64,
            }
        })
        .collect();
    Observation::Bin { areas }
}

pub fn fit_bin(sample: &SurveySample, config: &SamplerConfig) -> Result<AreaEstimates> {
    let model = AreaModel::new(sample.areas(), LinkingSpec::iid(UNIT_SD_PRIOR), bin_observation(sample))?;
    let posterior = engine::sample(&model, &model_seed(config, ModelKind::Bin))?;
    let direct = DirectEstimates::compute(sample, &WeightSet::from_sample(sample))?;
    Ok(estimates(ModelKind::Bin, sample, direct_stability(sample, &direct), posterior))
}

/// Precision of the Beta likelihood for mean `mu` and variance `psi`.
pub fn beta_precision(mu: f64, psi: f64) -> f64 {
    mu * (1.0 - mu) / psi - 1.0
}

/// The same precision via the effective sample size `n / deff - 1`, where
/// `deff = psi / (mu (1 - mu) / n)`.
pub fn precision_from_design_effect(n: f64, mu: f64, psi: f64) -> f64 {
    let deff = psi / (mu * (1.0 - mu) / n);
    n / deff - 1.0
}

/// BETA inputs: perturbed direct means for the sampled areas and bounds for all areas.
pub fn beta_observation(sample: &SurveySample, direct: &DirectEstimates) -> Result<Observation> {
    let usable = |d: &crate::survey::DirectArea| d.stable && d.psi.is_some_and(|p| p > 0.0 && p < 0.25);
    let mut pops = Vec::new();
    let mut psis = Vec::new();
    for d in &direct.areas {
        if usable(d) {
            pops.push(population(sample, d.area_id)?);
            psis.push(d.psi.unwrap());
        } else if d.stable {
            log::warn!("area {} has direct variance outside (0, 0.25); imputing it", d.area_id);
        }
    }
    let gvf = BetaGvf::fit(&pops, &psis)?;
    let mut bounds = Vec::with_capacity(sample.total_areas());
    for a in sample.areas() {
        let psi = match direct.get(a.area_id) {
            Some(d) if usable(d) => d.psi.unwrap().min(MAX_BETA_PSI),
            _ => gvf.predict(population(sample, a.area_id)?),
        };
        bounds.push(BetaBounds::new(psi, BETA_MU_FLOOR)?);
    }
    let areas = direct
        .areas
        .iter()
        .map(|d| BetaObs { pos: position(d.area_id), mu_d: perturb_unstable(d.mu, DEFAULT_PERTURBATION) })
        .collect();
    Ok(Observation::Beta { areas, bounds })
}

fn population(sample: &SurveySample, area_id: u32) -> Result<f64> {
    sample.area(area_id).population.map(|n| n as f64).ok_or(Error::CensusRequired)
}

pub fn fit_beta(sample: &SurveySample, config: &SamplerConfig) -> Result<AreaEstimates> {
    let direct = DirectEstimates::compute(sample, &WeightSet::from_sample(sample))?;
    let obs = beta_observation(sample, &direct)?;
    let model = AreaModel::new(sample.areas(), LinkingSpec::iid(WIDE_SD_PRIOR), obs)?;
    let posterior = engine::sample(&model, &model_seed(config, ModelKind::Beta))?;
    Ok(estimates(ModelKind::Beta, sample, direct_stability(sample, &direct), posterior))
}

/// ELN inputs: empirical logits of the perturbed direct means; unstable
/// areas leave their variance to the variance function.
pub fn eln_observation(direct: &DirectEstimates, correction: GvfCorrection) -> Observation {
    let areas = direct
        .areas
        .iter()
        .map(|d| ElnObs {
            pos: position(d.area_id),
            theta_d: d.theta.unwrap_or_else(|| logit(perturb_unstable(d.mu, DEFAULT_PERTURBATION))),
            gamma: d.gamma,
            log_n: (d.n as f64).ln(),
        })
        .collect();
    Observation::Eln { areas, correction }
}

pub fn fit_eln(sample: &SurveySample, correction: GvfCorrection, config: &SamplerConfig) -> Result<AreaEstimates> {
    let direct = DirectEstimates::compute(sample, &WeightSet::from_sample(sample))?;
    let obs = eln_observation(&direct, correction);
    let model = AreaModel::new(sample.areas(), LinkingSpec::iid(WIDE_SD_PRIOR), obs)?;
    let posterior = engine::sample(&model, &model_seed(config, ModelKind::Eln))?;
    Ok(estimates(ModelKind::Eln, sample, direct_stability(sample, &direct), posterior))
}
