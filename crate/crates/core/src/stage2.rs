//! The second stage: an area-level model on the stage-one logits with a
//! measurement layer over the S1 draws, a sampling layer with smoothed
//! variances and the shared linking model.

use crate::area::benchmark::BenchmarkSpec;
use crate::area::bym2::{Graph, RhoPrior};
use crate::area::gvf::GvfCorrection;
use crate::area::{AreaEffect, AreaEstimates, AreaModel, LinkingSpec, ModelKind, Observation, TslnObs};
use crate::engine::{self, SamplerConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, purpose};
use crate::stage1::{build_s1_estimates, fit_stage1, S1Summaries, Stage1Fit, Stage1Spec};
use crate::survey::{AreaMeta, SurveySample, WeightSet};

/// Half-normal prior sd on the area-effect scale.
pub const STAGE2_SD_PRIOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSpec {
    pub graph: Graph,
    pub rho: RhoPrior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Spec {
    pub spatial: Option<SpatialSpec>,
    pub gvf_correction: GvfCorrection,
    pub benchmark: Option<BenchmarkSpec>,
    pub sd_prior: f64,
}

impl Default for Stage2Spec {
    fn default() -> Self {
        Self { spatial: None, gvf_correction: GvfCorrection::Corrected, benchmark: None, sd_prior: STAGE2_SD_PRIOR }
    }
}

impl Stage2Spec {
    pub fn linking(&self) -> LinkingSpec {
        let effect = match &self.spatial {
            Some(s) => AreaEffect::Bym2 { graph: s.graph.clone(), rho: s.rho },
            None => AreaEffect::Iid,
        };
        LinkingSpec { effect, sd_prior: self.sd_prior }
    }
}

/// Stage-two observation layer for the areas with S1 estimates.
pub fn tsln_observation(summaries: &S1Summaries, areas: &[AreaMeta], correction: GvfCorrection) -> Result<Observation> {
    let mut obs = Vec::with_capacity(summaries.areas.len());
    for a in &summaries.areas {
        let pos = areas
            .iter()
            .position(|m| m.area_id == a.area_id)
            .ok_or_else(|| Error::invalid(format!("S1 area {} missing from the area list", a.area_id)))?;
        if a.theta_subset.is_empty() {
            return Err(Error::invalid(format!("area {} has an empty draw subset", a.area_id)));
        }
        obs.push(TslnObs::from_subset(pos, &a.theta_subset, a.var_theta, a.gamma_bar, a.stable, a.n));
    }
    warn_outside_support(&obs);
    Ok(Observation::Tsln { areas: obs, correction })
}

fn warn_outside_support(obs: &[TslnObs]) {
    let stable = obs.iter().filter(|o| o.stable).map(|o| o.log_n);
    let (lo, hi) = stable.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    for o in obs.iter().filter(|o| !o.stable) {
        if o.log_n < lo || o.log_n > hi {
            log::warn!(
                "unstable area at position {} has sample size {:.0} outside the variance-function support",
                o.pos,
                o.log_n.exp()
            );
        }
    }
}

pub fn stage2_model(summaries: &S1Summaries, areas: &[AreaMeta], spec: &Stage2Spec) -> Result<AreaModel> {
    let obs = tsln_observation(summaries, areas, spec.gvf_correction)?;
    let model = AreaModel::new(areas, spec.linking(), obs)?;
    match &spec.benchmark {
        Some(b) => {
            let pops = populations(areas)?;
            model.with_benchmark(b.clone(), pops)
        }
        None => Ok(model),
    }
}

pub(crate) fn populations(areas: &[AreaMeta]) -> Result<Vec<f64>> {
    areas
        .iter()
        .map(|a| a.population.map(|n| n as f64).ok_or(Error::CensusRequired))
        .collect()
}

/// Samples the stage-two posterior given S1 summaries.
pub fn fit_stage2(
    summaries: &S1Summaries,
    sample: &SurveySample,
    spec: &Stage2Spec,
    config: &SamplerConfig,
) -> Result<AreaEstimates> {
    let areas = sample.areas();
    let model = stage2_model(summaries, areas, spec)?;
    let posterior = engine::sample(&model, config)?;
    Ok(AreaEstimates {
        model: ModelKind::Tsln,
        area_ids: areas.iter().map(|a| a.area_id).collect(),
        sampled: areas.iter().map(|a| sample.is_sampled(a.area_id)).collect(),
        stable: areas.iter().map(|a| summaries.get(a.area_id).is_some_and(|s| s.stable)).collect(),
        posterior,
    })
}

/// Both stages of a two-stage fit.
pub struct TslnFit {
    pub stage1: Stage1Fit,
    pub summaries: S1Summaries,
    pub estimates: AreaEstimates,
}

impl TslnFit {
    pub fn converged(&self) -> bool {
        self.stage1.converged() && self.estimates.converged()
    }

    pub fn max_rhat(&self) -> f64 {
        self.stage1.max_rhat().max(self.estimates.max_rhat())
    }
}

/// Runs stage one, builds the S1 summaries and fits stage two.
pub fn fit_tsln(
    sample: &SurveySample,
    stage1: &Stage1Spec,
    stage2: &Stage2Spec,
    config: &SamplerConfig,
) -> Result<TslnFit> {
    let weights = WeightSet::from_sample(sample);
    let s1 = fit_stage1(sample, &weights, stage1, config)?;
    if !s1.converged() {
        log::warn!("stage one did not converge (max R-hat {:.3})", s1.max_rhat());
    }
    let p_draws = s1.probability_draws();
    let summaries = build_s1_estimates(&p_draws, sample, &weights, config.seed)?;
    let s2_config = config.with_seed(derive_seed(config.seed, &[purpose::STAGE_TWO]));
    let estimates = fit_stage2(&summaries, sample, stage2, &s2_config)?;
    Ok(TslnFit { stage1: s1, summaries, estimates })
}

#[cfg(test)]
mod tests;
