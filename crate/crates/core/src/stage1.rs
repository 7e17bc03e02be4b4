//! The individual-level pseudo-likelihood logistic model, the stage-one (S1)
//! area estimates built from its posterior, and the smoothing diagnostics.

use crate::engine::density::{half_normal_lpdf, log1p_exp, normal_lpdf, positive, student_t_lpdf};
use crate::engine::{self, LogDensity, PosteriorMatrix, SamplerConfig};
use crate::error::{Error, Result};
use crate::rng::{self, purpose};
use crate::survey::{
    empirical_logit, hajek_variance, inv_logit, weighted_residual_variance, DirectEstimates, Record,
    SurveySample, WeightSet,
};
use nalgebra::DMatrix;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Prior sd for non-intercept coefficients.
pub const COEF_PRIOR_SD: f64 = 2.0;

const P_FLOOR: f64 = 1e-12;

/// Which covariates and random terms enter the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Spec {
    /// Indicators for survey covariate levels 2 and 3.
    pub x_survey: bool,
    pub x_census: bool,
    /// The area-level covariate Z, expanded to records.
    pub area_covariate: bool,
    pub area_effect: bool,
    /// Known sd of an added record-level error term.
    pub record_noise_sd: Option<f64>,
}

impl Default for Stage1Spec {
    fn default() -> Self {
        Self::tsln()
    }
}

impl Stage1Spec {
    pub fn tsln() -> Self {
        Self { x_survey: true, x_census: true, area_covariate: true, area_effect: true, record_noise_sd: None }
    }

    /// Intercept-only model with fixed record-level noise, optionally with an area effect.
    pub fn smoothing_probe(area_effect: bool, sigma_e: f64) -> Self {
        Self {
            x_survey: false,
            x_census: false,
            area_covariate: false,
            area_effect,
            record_noise_sd: Some(sigma_e),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.record_noise_sd {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config(format!("record noise sd {s} must be positive")));
            }
        }
        Ok(())
    }
}

/// Mean-centred design columns (the intercept column stays at one).
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    spec: Stage1Spec,
    means: Vec<f64>,
}

impl Design {
    fn raw_row(spec: &Stage1Spec, r: &Record, z: f64, out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        if spec.x_survey {
            out.push(f64::from(u8::from(r.x_survey == 2)));
            out.push(f64::from(u8::from(r.x_survey == 3)));
        }
        if spec.x_census {
            out.push(r.x_census);
        }
        if spec.area_covariate {
            out.push(z);
        }
    }

    /// Builds the centring from the sample and returns the design with its
    /// row-major matrix. Errors when the columns are not of full rank.
    pub fn fit(spec: &Stage1Spec, sample: &SurveySample) -> Result<(Self, Vec<f64>)> {
        let mut names = vec!["beta0".to_string()];
        if spec.x_survey {
            names.push("beta_xs2".into());
            names.push("beta_xs3".into());
        }
        if spec.x_census {
            names.push("beta_xc".into());
        }
        if spec.area_covariate {
            names.push("beta_z".into());
        }
        let k = names.len();
        let n = sample.len();
        if n == 0 {
            return Err(Error::invalid("empty sample"));
        }
        let mut x = Vec::with_capacity(n * k);
        let mut row = Vec::with_capacity(k);
        for r in sample.records() {
            Self::raw_row(spec, r, sample.area(r.area_id).z, &mut row);
            x.extend_from_slice(&row);
        }
        let mut means = vec![0.0; k];
        for i in 0..n {
            for c in 1..k {
                means[c] += x[i * k + c] / n as f64;
            }
        }
        for i in 0..n {
            for c in 1..k {
                x[i * k + c] -= means[c];
            }
        }
        let xm = DMatrix::from_row_slice(n, k, &x);
        let xtx = xm.transpose() * &xm;
        let scale = xtx.diagonal().max().max(1.0);
        if xtx.cholesky().is_none() || xm.clone().svd(false, false).singular_values.min() < 1e-8 * scale.sqrt() {
            return Err(Error::invalid("design matrix is not of full column rank"));
        }
        Ok((Self { names, spec: *spec, means }, x))
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    /// Centred row for a record outside the fitting sample.
    pub fn row(&self, r: &Record, z: f64, out: &mut Vec<f64>) {
        Self::raw_row(&self.spec, r, z, out);
        for (v, m) in out.iter_mut().zip(&self.means).skip(1) {
            *v -= m;
        }
    }
}

/// Posterior target for the stage-one model.
///
/// Unconstrained layout: coefficients, then (with an area effect) the log
/// area-effect sd and one standard-normal effect per sampled area, then
/// (with record noise) one standard-normal auxiliary per record.
pub struct Stage1Model {
    pub design: Design,
    spec: Stage1Spec,
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    /// Position of each record's area among the sampled areas.
    area_pos: Vec<usize>,
    area_ids: Vec<u32>,
}

impl Stage1Model {
    pub fn new(sample: &SurveySample, weights: &WeightSet, spec: &Stage1Spec) -> Result<Self> {
        spec.validate()?;
        let (design, x) = Design::fit(spec, sample)?;
        let area_ids = sample.sampled_areas();
        let area_pos = sample
            .records()
            .iter()
            .map(|r| area_ids.binary_search(&r.area_id).expect("record area is sampled"))
            .collect();
        Ok(Self {
            design,
            spec: *spec,
            x,
            y: sample.records().iter().map(|r| f64::from(r.y)).collect(),
            w: weights.w_sample.clone(),
            area_pos,
            area_ids,
        })
    }

    fn k(&self) -> usize {
        self.design.width()
    }

    fn m(&self) -> usize {
        if self.spec.area_effect {
            self.area_ids.len()
        } else {
            0
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn area_offset(&self) -> usize {
        self.k()
    }

    fn noise_offset(&self) -> usize {
        self.k() + if self.spec.area_effect { 1 + self.m() } else { 0 }
    }

    pub fn area_ids(&self) -> &[u32] {
        &self.area_ids
    }

    /// Linear predictors for every record at an unconstrained point.
    fn linear_predictor(&self, x: &[f64], eta: &mut [f64]) {
        let k = self.k();
        let beta = &x[..k];
        let sigma = if self.spec.area_effect { x[k].exp() } else { 0.0 };
        let z = if self.spec.area_effect { &x[k + 1..k + 1 + self.m()] } else { &[][..] };
        let off = self.noise_offset();
        for (j, e) in eta.iter_mut().enumerate() {
            let row = &self.x[j * k..(j + 1) * k];
            let mut v: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            if self.spec.area_effect {
                v += sigma * z[self.area_pos[j]];
            }
            if let Some(se) = self.spec.record_noise_sd {
                v += se * x[off + j];
            }
            *e = v;
        }
    }

    /// Record probabilities from one stored (constrained) draw.
    pub fn probabilities(&self, draw: &[f64], out: &mut [f64]) {
        let k = self.k();
        let m = self.m();
        let effects = if self.spec.area_effect { &draw[k + 1..k + 1 + m] } else { &[][..] };
        let noise_off = k + if self.spec.area_effect { 1 + m } else { 0 };
        for (j, p) in out.iter_mut().enumerate() {
            let row = &self.x[j * k..(j + 1) * k];
            let mut v: f64 = row.iter().zip(&draw[..k]).map(|(a, b)| a * b).sum();
            if self.spec.area_effect {
                v += effects[self.area_pos[j]];
            }
            if self.spec.record_noise_sd.is_some() {
                v += draw[noise_off + j];
            }
            // Keeps aggregated S1 means strictly inside (0, 1) in floating point.
            *p = inv_logit(v).clamp(P_FLOOR, 1.0 - P_FLOOR);
        }
    }

    /// Coefficients of a stored draw.
    pub fn coefficients<'a>(&self, draw: &'a [f64]) -> &'a [f64] {
        &draw[..self.k()]
    }

    /// Area-effect sd of a stored draw, if the model has one.
    pub fn effect_sd(&self, draw: &[f64]) -> Option<f64> {
        self.spec.area_effect.then(|| draw[self.k()])
    }

    /// Scaled area effect of a sampled area in a stored draw.
    pub fn area_effect(&self, draw: &[f64], area_id: u32) -> Option<f64> {
        if !self.spec.area_effect {
            return None;
        }
        let pos = self.area_ids.binary_search(&area_id).ok()?;
        Some(draw[self.k() + 1 + pos])
    }

    /// Indices of the quantities checked for convergence: coefficients and sd.
    pub fn monitored(&self) -> Vec<usize> {
        let n = self.k() + usize::from(self.spec.area_effect);
        (0..n).collect()
    }
}

impl LogDensity for Stage1Model {
    fn dim(&self) -> usize {
        self.noise_offset() + if self.spec.record_noise_sd.is_some() { self.n() } else { 0 }
    }

    fn log_density(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let k = self.k();
        let n = self.n();
        let mut eta = vec![0.0; n];
        self.linear_predictor(x, &mut eta);
        let mut lp = 0.0;
        let mut area_resid = vec![0.0; self.m()];
        let noise_off = self.noise_offset();
        for j in 0..n {
            let e = eta[j];
            if !e.is_finite() {
                return f64::NEG_INFINITY;
            }
            lp += self.w[j] * (self.y[j] * e - log1p_exp(e));
            let r = self.w[j] * (self.y[j] - inv_logit(e));
            let row = &self.x[j * k..(j + 1) * k];
            for (g, a) in grad[..k].iter_mut().zip(row) {
                *g += r * a;
            }
            if self.spec.area_effect {
                area_resid[self.area_pos[j]] += r;
            }
            if let Some(se) = self.spec.record_noise_sd {
                grad[noise_off + j] += se * r;
            }
        }
        let (l0, d0) = student_t_lpdf(x[0], 3.0, 1.0);
        lp += l0;
        grad[0] += d0;
        for c in 1..k {
            let (l, d) = normal_lpdf(x[c], 0.0, COEF_PRIOR_SD);
            lp += l;
            grad[c] += d;
        }
        if self.spec.area_effect {
            let off = self.area_offset();
            let (sigma, log_jac) = positive(x[off]);
            let (l, d) = half_normal_lpdf(sigma, 1.0);
            lp += l + log_jac;
            let mut ds = d * sigma + 1.0;
            for (i, &ar) in area_resid.iter().enumerate() {
                let z = x[off + 1 + i];
                ds += sigma * z * ar;
                let (l, d) = normal_lpdf(z, 0.0, 1.0);
                lp += l;
                grad[off + 1 + i] += sigma * ar + d;
            }
            grad[off] += ds;
        }
        if self.spec.record_noise_sd.is_some() {
            for j in 0..n {
                let u = x[noise_off + j];
                lp += -0.5 * u * u;
                grad[noise_off + j] -= u;
            }
        }
        lp
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = self.design.names.clone();
        if self.spec.area_effect {
            names.push("sigma_e".into());
            names.extend(self.area_ids.iter().map(|id| format!("e[{id}]")));
        }
        if self.spec.record_noise_sd.is_some() {
            names.extend((0..self.n()).map(|j| format!("eps[{j}]")));
        }
        names
    }

    /// Stores coefficients, the sd, the scaled area effects and scaled record errors.
    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        let k = self.k();
        if self.spec.area_effect {
            let sigma = x[k].exp();
            out[k] = sigma;
            for v in &mut out[k + 1..k + 1 + self.m()] {
                *v *= sigma;
            }
        }
        if let Some(se) = self.spec.record_noise_sd {
            for v in &mut out[self.noise_offset()..] {
                *v *= se;
            }
        }
        out
    }
}

/// A fitted stage-one model.
pub struct Stage1Fit {
    pub model: Stage1Model,
    pub posterior: PosteriorMatrix,
}

impl Stage1Fit {
    pub fn converged(&self) -> bool {
        self.posterior.converged(self.model.monitored())
    }

    pub fn max_rhat(&self) -> f64 {
        self.posterior.max_rhat(self.model.monitored())
    }

    /// Probability draws (draw x record), pooled over chains in chain order.
    pub fn probability_draws(&self) -> Vec<Vec<f64>> {
        let n = self.model.n();
        let draws: Vec<&[f64]> = self.posterior.iter_draws().collect();
        draws
            .par_iter()
            .map(|d| {
                let mut p = vec![0.0; n];
                self.model.probabilities(d, &mut p);
                p
            })
            .collect()
    }
}

pub fn fit_stage1(
    sample: &SurveySample,
    weights: &WeightSet,
    spec: &Stage1Spec,
    config: &SamplerConfig,
) -> Result<Stage1Fit> {
    let model = Stage1Model::new(sample, weights, spec)?;
    let posterior = engine::sample(&model, config)?;
    Ok(Stage1Fit { model, posterior })
}

/// S1 quantities for one sampled area.
#[derive(Debug, Clone, PartialEq)]
pub struct S1Area {
    pub area_id: u32,
    pub n: usize,
    /// Whether the direct estimate is stable.
    pub stable: bool,
    pub psi_direct: f64,
    pub mu: Vec<f64>,
    pub psi: Vec<f64>,
    pub bias: Vec<f64>,
    pub theta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub gamma_bar: f64,
    /// Sample variance of the theta draws.
    pub var_theta: f64,
    /// Theta draws at the shared subset indices.
    pub theta_subset: Vec<f64>,
}

impl S1Area {
    pub fn mu_median(&self) -> f64 {
        median(&self.mu)
    }

    pub fn theta_median(&self) -> f64 {
        median(&self.theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct S1Summaries {
    pub areas: Vec<S1Area>,
    /// Draw indices forming the subset passed to stage two.
    pub subset: Vec<usize>,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Aggregates record probability draws (draw x record) to S1 estimates for
/// every sampled area with at least two records. `subset_seed` keys the
/// stream that picks the half-size subset of draws.
pub fn build_s1_estimates(
    p_draws: &[Vec<f64>],
    sample: &SurveySample,
    weights: &WeightSet,
    subset_seed: u64,
) -> Result<S1Summaries> {
    let t = p_draws.len();
    if t < 2 {
        return Err(Error::invalid("at least two posterior draws are required"));
    }
    if p_draws.iter().any(|d| d.len() != sample.len()) {
        return Err(Error::invalid("probability draws do not match the sample"));
    }
    let mut srng = rng::stream(subset_seed, &[purpose::SUBSET]);
    let mut subset = index::sample(&mut srng, t, t / 2).into_vec();
    subset.sort_unstable();

    let records = sample.records();
    let direct = DirectEstimates::compute(sample, weights)?;
    let mut areas = Vec::with_capacity(direct.areas.len());
    for d in &direct.areas {
        let idx = sample.area_records(d.area_id);
        if idx.len() < 2 {
            log::warn!("area {} has a single record; excluded from S1 estimates", d.area_id);
            continue;
        }
        let w: Vec<f64> = idx.iter().map(|&j| weights.w_area[j]).collect();
        let y: Vec<u8> = idx.iter().map(|&j| records[j].y).collect();
        let population = sample.area(d.area_id).population;
        let psi_direct = hajek_variance(&y, &w, d.mu, population)?;
        let n = idx.len() as f64;
        let mut mu = Vec::with_capacity(t);
        let mut psi = Vec::with_capacity(t);
        let mut bias = Vec::with_capacity(t);
        let mut theta = Vec::with_capacity(t);
        let mut gamma = Vec::with_capacity(t);
        for draw in p_draws {
            let p: Vec<f64> = idx.iter().map(|&j| draw[j]).collect();
            let m: f64 = w.iter().zip(&p).map(|(w, p)| w * p).sum::<f64>() / n;
            let resid: Vec<f64> = p.iter().zip(&y).map(|(p, &y)| p - f64::from(y)).collect();
            let b = w.iter().zip(&resid).map(|(w, r)| w * r).sum::<f64>() / n;
            let v_b = weighted_residual_variance(&w, resid.iter().copied(), population)?;
            let s = psi_direct + v_b;
            let (th, g) = empirical_logit(m, s)?;
            mu.push(m);
            psi.push(s);
            bias.push(b);
            theta.push(th);
            gamma.push(g);
        }
        let gamma_bar = gamma.iter().sum::<f64>() / t as f64;
        let var_theta = sample_variance(&theta);
        let theta_subset = subset.iter().map(|&s| theta[s]).collect();
        areas.push(S1Area {
            area_id: d.area_id,
            n: idx.len(),
            stable: d.stable,
            psi_direct,
            mu,
            psi,
            bias,
            theta,
            gamma,
            gamma_bar,
            var_theta,
            theta_subset,
        });
    }
    Ok(S1Summaries { areas, subset })
}

impl S1Summaries {
    pub fn get(&self, area_id: u32) -> Option<&S1Area> {
        self.areas.iter().find(|a| a.area_id == area_id)
    }

    /// One row per (area, draw).
    pub fn write_draws_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["area_id", "draw", "mu", "psi", "bias", "theta", "gamma"])?;
        for a in &self.areas {
            for t in 0..a.mu.len() {
                w.write_record(&[
                    a.area_id.to_string(),
                    t.to_string(),
                    a.mu[t].to_string(),
                    a.psi[t].to_string(),
                    a.bias[t].to_string(),
                    a.theta[t].to_string(),
                    a.gamma[t].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One row per area with the stage-two inputs.
    pub fn write_summary_csv<W: Write>(&self, writer: W, direct: &DirectEstimates) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "area_id", "n", "stable", "mu_median", "theta_median", "gamma_bar", "var_theta", "mu_direct",
            "theta_direct", "psi_direct",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for a in &self.areas {
            let d = direct.get(a.area_id);
            w.write_record(&[
                a.area_id.to_string(),
                a.n.to_string(),
                a.stable.to_string(),
                a.mu_median().to_string(),
                a.theta_median().to_string(),
                a.gamma_bar.to_string(),
                a.var_theta.to_string(),
                opt(d.map(|d| d.mu)),
                opt(d.and_then(|d| d.theta)),
                a.psi_direct.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Weighted least-squares slope of `y` on `x` with weights `w`.
pub fn wls_slope(x: &[f64], y: &[f64], w: &[f64]) -> Result<f64> {
    if x.len() < 3 {
        return Err(Error::invalid("at least three points are required"));
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - mx).powi(2)).sum();
    if sxx <= 1e-300 * sw || x.iter().all(|&v| v == x[0]) {
        return Err(Error::NoVariation);
    }
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Area linear comparison: WLS slope of the S1 logit medians on the direct
/// logits, weighted by `1/psi_direct`, over stable areas.
pub fn alc(theta_s1_medians: &[f64], theta_direct: &[f64], psi_direct: &[f64]) -> Result<f64> {
    if psi_direct.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::invalid("direct variances must be positive"));
    }
    let w: Vec<f64> = psi_direct.iter().map(|p| 1.0 / p).collect();
    wls_slope(theta_direct, theta_s1_medians, &w)
}

/// ALC from S1 summaries and direct estimates (stable areas only).
pub fn alc_from(summaries: &S1Summaries, direct: &DirectEstimates) -> Result<f64> {
    let (mut s1, mut td, mut psi) = (Vec::new(), Vec::new(), Vec::new());
    for a in &summaries.areas {
        if let Some(d) = direct.get(a.area_id) {
            if let (true, Some(theta), Some(p)) = (d.stable, d.theta, d.psi) {
                s1.push(a.theta_median());
                td.push(theta);
                psi.push(p);
            }
        }
    }
    alc(&s1, &td, &psi)
}

/// Per-draw smoothing ratio. `areas` lists record indices per sampled area;
/// `w_area` are area-normalised weights; `overall` is the overall prevalence.
pub fn smoothing_ratio_draws(
    p_draws: &[Vec<f64>],
    y: &[u8],
    w_area: &[f64],
    areas: &[&[usize]],
    overall: f64,
) -> Result<Vec<f64>> {
    let area_mean = |vals: &dyn Fn(usize) -> f64, idx: &[usize]| -> f64 {
        idx.iter().map(|&j| w_area[j] * vals(j)).sum::<f64>() / idx.len() as f64
    };
    let denom: f64 = areas
        .iter()
        .map(|idx| area_mean(&|j| f64::from(y[j]) - overall, idx).abs())
        .sum();
    if !(denom > 0.0) {
        return Err(Error::DegenerateSample);
    }
    Ok(p_draws
        .iter()
        .map(|p| {
            let num: f64 = areas
                .iter()
                .map(|idx| area_mean(&|j| f64::from(y[j]) - p[j], idx).abs())
                .sum();
            1.0 - num / denom
        })
        .collect())
}

/// Posterior median smoothing ratio for a sample.
pub fn smoothing_ratio(p_draws: &[Vec<f64>], sample: &SurveySample, weights: &WeightSet) -> Result<f64> {
    let y: Vec<u8> = sample.records().iter().map(|r| r.y).collect();
    let ids = sample.sampled_areas();
    let areas: Vec<&[usize]> = ids.iter().map(|&id| sample.area_records(id)).collect();
    let overall = crate::survey::overall_prevalence(sample, weights);
    let draws = smoothing_ratio_draws(p_draws, &y, &weights.w_area, &areas, overall)?;
    Ok(median(&draws))
}
