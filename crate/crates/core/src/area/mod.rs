//! Area-level models: the shared linking model (covariates plus an iid or
//! BYM2 area effect) under the observation layers used by the two-stage
//! model and the area-level baselines, variance functions, spatial priors
//! and benchmarking.

pub mod benchmark;
pub mod bym2;
pub mod gvf;

use crate::engine::density::{
    half_cauchy_lpdf, half_normal_lpdf, log1p_exp, normal_lpdf, normal_lpdf_var, positive, student_t_lpdf,
    unit_interval,
};
use crate::engine::{hdi, LogDensity, PosteriorMatrix};
use crate::error::{Error, Result};
use crate::stage1::median;
use crate::survey::{inv_logit, AreaMeta};
use benchmark::BenchmarkSpec;
use bym2::{icar_log_prior, Graph, RhoPrior};
use gvf::{gvf_impute_with_grad, GvfCorrection};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;

/// Prior sd of the non-intercept linking coefficients.
pub const LAMBDA_PRIOR_SD: f64 = 2.0;
/// Prior sd of the variance-function coefficients.
pub const OMEGA_PRIOR_SD: f64 = 2.0;
/// Scale of the half-Cauchy prior on the variance-function residual sd.
pub const GVF_SD_SCALE: f64 = 2.0;
/// Fewer stable areas leave the variance-function residual sd without a proper posterior.
pub const MIN_GVF_AREAS: usize = 3;
/// Floor on the measurement variance of the S1 logits.
const MIN_MEASUREMENT_VAR: f64 = 1e-12;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "TSLN")]
    Tsln,
    #[serde(rename = "LOG")]
    Log,
    #[serde(rename = "BIN")]
    Bin,
    #[serde(rename = "BETA")]
    Beta,
    #[serde(rename = "ELN")]
    Eln,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Tsln, ModelKind::Log, ModelKind::Bin, ModelKind::Beta, ModelKind::Eln];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Tsln => "TSLN",
            ModelKind::Log => "LOG",
            ModelKind::Bin => "BIN",
            ModelKind::Beta => "BETA",
            ModelKind::Eln => "ELN",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown model '{s}'")))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mean-centred area design: intercept and the area covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaDesign {
    pub names: Vec<String>,
    q: usize,
    z: Vec<f64>,
}

impl AreaDesign {
    pub fn from_areas(areas: &[AreaMeta]) -> Result<Self> {
        let m = areas.len();
        if m == 0 {
            return Err(Error::invalid("no areas"));
        }
        let mean = areas.iter().map(|a| a.z).sum::<f64>() / m as f64;
        let ss: f64 = areas.iter().map(|a| (a.z - mean).powi(2)).sum();
        if !(ss > 1e-12) {
            return Err(Error::invalid("area design matrix is not of full column rank"));
        }
        let mut z = Vec::with_capacity(2 * m);
        for a in areas {
            z.push(1.0);
            z.push(a.z - mean);
        }
        Ok(Self { names: vec!["lambda0".into(), "lambda_z".into()], q: 2, z })
    }

    pub fn width(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.z.len() / self.q
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.q..(i + 1) * self.q]
    }
}

/// Area random effect in the linking model.
#[derive(Debug, Clone, PartialEq)]
pub enum AreaEffect {
    /// `sigma * z_i`, `z_i ~ N(0, 1)`.
    Iid,
    /// `sigma * (s_i sqrt(rho/kappa) + u_i sqrt(1 - rho))`.
    Bym2 { graph: Graph, rho: RhoPrior },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkingSpec {
    pub effect: AreaEffect,
    /// Half-normal prior sd of the effect's scale.
    pub sd_prior: f64,
}

impl LinkingSpec {
    pub fn iid(sd_prior: f64) -> Self {
        Self { effect: AreaEffect::Iid, sd_prior }
    }
}

/// Per-area inputs of the two-stage sampling and measurement layers.
#[derive(Debug, Clone, PartialEq)]
pub struct TslnObs {
    pub pos: usize,
    /// Subset size, and the sum and sum of squares of the subset logits.
    pub count: f64,
    pub sum: f64,
    pub sumsq: f64,
    pub var_theta: f64,
    pub gamma_bar: f64,
    pub stable: bool,
    pub log_n: f64,
}

impl TslnObs {
    pub fn from_subset(pos: usize, subset: &[f64], var_theta: f64, gamma_bar: f64, stable: bool, n: usize) -> Self {
        // Pairwise summation keeps the sums reproducible and accurate.
        let sum = pairwise_sum(subset);
        let sq: Vec<f64> = subset.iter().map(|t| t * t).collect();
        Self {
            pos,
            count: subset.len() as f64,
            sum,
            sumsq: pairwise_sum(&sq),
            var_theta,
            gamma_bar,
            stable,
            log_n: (n as f64).ln(),
        }
    }
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Empirical-logit direct observation; `gamma` is `None` when it must be imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct ElnObs {
    pub pos: usize,
    pub theta_d: f64,
    pub gamma: Option<f64>,
    pub log_n: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinObs {
    pub pos: usize,
    pub y: f64,
    pub n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBounds {
    pub lo: f64,
    pub hi: f64,
    pub psi: f64,
}

impl BetaBounds {
    /// Intersection of `(floor, 1 - floor)` with the interval keeping both
    /// shape parameters positive for variance `psi`.
    pub fn new(psi: f64, floor: f64) -> Result<Self> {
        if !(psi > 0.0 && psi < 0.25) {
            return Err(Error::invalid(format!("Beta variance {psi} outside (0, 0.25)")));
        }
        let r = (1.0 - 4.0 * psi).sqrt();
        let lo = floor.max((1.0 - r) / 2.0);
        let hi = (1.0 - floor).min((1.0 + r) / 2.0);
        if !(lo < hi) {
            return Err(Error::invalid(format!("empty admissible mean range for variance {psi}")));
        }
        Ok(Self { lo, hi, psi })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaObs {
    pub pos: usize,
    pub mu_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Tsln { areas: Vec<TslnObs>, correction: GvfCorrection },
    Eln { areas: Vec<ElnObs>, correction: GvfCorrection },
    Bin { areas: Vec<BinObs> },
    Beta { areas: Vec<BetaObs>, bounds: Vec<BetaBounds> },
}

impl Observation {
    fn extra_dim(&self) -> usize {
        match self {
            Observation::Tsln { areas, .. } => areas.len() + 3,
            Observation::Eln { .. } => 3,
            _ => 0,
        }
    }

    fn has_gvf(&self) -> bool {
        matches!(self, Observation::Tsln { .. } | Observation::Eln { .. })
    }
}

/// Linking model plus an observation layer, as a differentiable target.
pub struct AreaModel {
    pub design: AreaDesign,
    pub linking: LinkingSpec,
    pub obs: Observation,
    pub benchmark: Option<(BenchmarkSpec, Vec<f64>)>,
    area_ids: Vec<u32>,
}

struct Layout {
    re: usize,
    rho: Option<usize>,
    s: usize,
    u: Option<usize>,
    obs: usize,
    dim: usize,
}

impl AreaModel {
    pub fn new(areas: &[AreaMeta], linking: LinkingSpec, obs: Observation) -> Result<Self> {
        let design = AreaDesign::from_areas(areas)?;
        if let AreaEffect::Bym2 { graph, rho } = &linking.effect {
            if graph.n != areas.len() {
                return Err(Error::config(format!(
                    "adjacency has {} areas but the data have {}",
                    graph.n,
                    areas.len()
                )));
            }
            if let RhoPrior::Fixed(r) = rho {
                if !(0.0..=1.0).contains(r) {
                    return Err(Error::config("fixed rho must lie in [0, 1]"));
                }
            }
        }
        let stable = match &obs {
            Observation::Tsln { areas, .. } => Some(areas.iter().filter(|a| a.stable).count()),
            Observation::Eln { areas, .. } => Some(areas.iter().filter(|a| a.gamma.is_some()).count()),
            _ => None,
        };
        if stable.is_some_and(|k| k < MIN_GVF_AREAS) {
            return Err(Error::invalid(format!(
                "the variance function needs at least {MIN_GVF_AREAS} stable sampled areas"
            )));
        }
        if let Observation::Beta { bounds, .. } = &obs {
            if bounds.len() != areas.len() {
                return Err(Error::invalid("Beta bounds are required for every area"));
            }
        }
        Ok(Self { design, linking, obs, benchmark: None, area_ids: areas.iter().map(|a| a.area_id).collect() })
    }

    pub fn with_benchmark(mut self, spec: BenchmarkSpec, populations: Vec<f64>) -> Result<Self> {
        spec.validate(self.m())?;
        if populations.len() != self.m() {
            return Err(Error::invalid("one population per area is required for benchmarking"));
        }
        self.benchmark = Some((spec, populations));
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.area_ids.len()
    }

    fn layout(&self) -> Layout {
        let m = self.m();
        let re = self.design.width();
        let (rho, s, u, after) = match &self.linking.effect {
            AreaEffect::Iid => (None, re + 1, None, re + 1 + m),
            AreaEffect::Bym2 { rho, .. } => {
                let rho_idx = if matches!(rho, RhoPrior::Fixed(_)) { None } else { Some(re + 1) };
                let s = re + 1 + usize::from(rho_idx.is_some());
                (rho_idx, s, Some(s + m), s + 2 * m)
            }
        };
        Layout { re, rho, s, u, obs: after, dim: after + self.obs.extra_dim() }
    }

    /// Indices of the area proportions in the stored draws.
    pub fn monitored(&self) -> Vec<usize> {
        (0..self.m()).collect()
    }

    fn rho_value(&self, x: &[f64], lay: &Layout) -> f64 {
        match &self.linking.effect {
            AreaEffect::Bym2 { rho: RhoPrior::Fixed(r), .. } => *r,
            AreaEffect::Bym2 { .. } => inv_logit(x[lay.rho.unwrap()]),
            AreaEffect::Iid => 0.0,
        }
    }

    /// Linear predictor for every area.
    fn thetas(&self, x: &[f64], lay: &Layout) -> Vec<f64> {
        let m = self.m();
        let q = self.design.width();
        let sigma = x[lay.re].exp();
        let rho = self.rho_value(x, lay);
        (0..m)
            .map(|i| {
                let fixed: f64 = self.design.row(i).iter().zip(&x[..q]).map(|(a, b)| a * b).sum();
                fixed + sigma * self.effect_unit(x, lay, i, rho)
            })
            .collect()
    }

    /// Area effect divided by its scale.
    fn effect_unit(&self, x: &[f64], lay: &Layout, i: usize, rho: f64) -> f64 {
        match &self.linking.effect {
            AreaEffect::Iid => x[lay.s + i],
            AreaEffect::Bym2 { graph, .. } => {
                let u = x[lay.u.unwrap() + i];
                if graph.is_island(i) {
                    u
                } else {
                    x[lay.s + i] * (rho / graph.kappa_of(i)).sqrt() + u * (1.0 - rho).sqrt()
                }
            }
        }
    }

    /// Area proportion and its derivative in the linear predictor.
    fn mean_of(&self, i: usize, theta: f64) -> (f64, f64) {
        let p = inv_logit(theta);
        match &self.obs {
            Observation::Beta { bounds, .. } => {
                let b = bounds[i];
                (b.lo + (b.hi - b.lo) * p, (b.hi - b.lo) * p * (1.0 - p))
            }
            _ => (p, p * (1.0 - p)),
        }
    }

    fn gvf_params(&self, x: &[f64], off: usize) -> ([f64; 2], f64) {
        ([x[off], x[off + 1]], x[off + 2].exp())
    }

    /// Observation-layer log density; accumulates `d/dtheta` and parameter gradients.
    fn observation(&self, x: &[f64], theta: &[f64], g_theta: &mut [f64], grad: &mut [f64], lay: &Layout) -> f64 {
        let mut lp = 0.0;
        match &self.obs {
            Observation::Tsln { areas, correction } => {
                let gvf_off = lay.obs + areas.len();
                let (omega, sg) = self.gvf_params(x, gvf_off);
                let mut g_gvf = [0.0; 3];
                for (k, a) in areas.iter().enumerate() {
                    let tb = x[lay.obs + k];
                    let v = a.var_theta.max(MIN_MEASUREMENT_VAR);
                    // (1/T) sum_t log N(theta_t | tb, v) from sufficient statistics
                    let ss = a.sumsq - 2.0 * tb * a.sum + a.count * tb * tb;
                    lp += -0.5 * (2.0 * std::f64::consts::PI * v).ln() - ss / (2.0 * v * a.count);
                    grad[lay.obs + k] += (a.sum - a.count * tb) / (v * a.count);
                    let (gamma, dg) = if a.stable {
                        let (l, _) = normal_lpdf(0.5 * a.gamma_bar.ln(), omega[0] + omega[1] * a.log_n, sg);
                        lp += l;
                        self.gvf_fit_grad(a.gamma_bar, a.log_n, omega, sg, &mut g_gvf);
                        (a.gamma_bar, [0.0; 3])
                    } else {
                        gvf_impute_with_grad(omega, sg, a.log_n.exp(), *correction)
                    };
                    let (l, dx, dvar) = normal_lpdf_var(tb, theta[a.pos], gamma);
                    lp += l;
                    grad[lay.obs + k] += dx;
                    g_theta[a.pos] -= dx;
                    for c in 0..3 {
                        g_gvf[c] += dvar * dg[c];
                    }
                }
                lp += self.gvf_prior(x, gvf_off, g_gvf, grad);
            }
            Observation::Eln { areas, correction } => {
                let gvf_off = lay.obs;
                let (omega, sg) = self.gvf_params(x, gvf_off);
                let mut g_gvf = [0.0; 3];
                for a in areas {
                    let (gamma, dg) = match a.gamma {
                        Some(g) => {
                            let (l, _) = normal_lpdf(0.5 * g.ln(), omega[0] + omega[1] * a.log_n, sg);
                            lp += l;
                            self.gvf_fit_grad(g, a.log_n, omega, sg, &mut g_gvf);
                            (g, [0.0; 3])
                        }
                        None => gvf_impute_with_grad(omega, sg, a.log_n.exp(), *correction),
                    };
                    let (l, dx, dvar) = normal_lpdf_var(a.theta_d, theta[a.pos], gamma);
                    lp += l;
                    g_theta[a.pos] -= dx;
                    for c in 0..3 {
                        g_gvf[c] += dvar * dg[c];
                    }
                }
                lp += self.gvf_prior(x, gvf_off, g_gvf, grad);
            }
            Observation::Bin { areas } => {
                for a in areas {
                    let (l, d) = binomial_logit_lpmf(a.y, a.n, theta[a.pos]);
                    lp += l;
                    g_theta[a.pos] += d;
                }
            }
            Observation::Beta { areas, bounds } => {
                for a in areas {
                    let b = bounds[a.pos];
                    let (mu, dmu) = self.mean_of(a.pos, theta[a.pos]);
                    let phi = mu * (1.0 - mu) / b.psi - 1.0;
                    let dphi = (1.0 - 2.0 * mu) / b.psi;
                    let (ka, kb) = (mu * phi, (1.0 - mu) * phi);
                    if !(ka > 0.0 && kb > 0.0) {
                        return f64::NEG_INFINITY;
                    }
                    let (l, da, db) = crate::engine::density::beta_lpdf(a.mu_d, ka, kb);
                    lp += l;
                    let dka = phi + mu * dphi;
                    let dkb = -phi + (1.0 - mu) * dphi;
                    g_theta[a.pos] += (da * dka + db * dkb) * dmu;
                }
            }
        }
        lp
    }

    /// Gradient of `log N(0.5 log g | w0 + w1 ln, sg)` in `(w0, w1, log sg)`.
    fn gvf_fit_grad(&self, g: f64, log_n: f64, omega: [f64; 2], sg: f64, acc: &mut [f64; 3]) {
        let r = 0.5 * g.ln() - omega[0] - omega[1] * log_n;
        let d = r / (sg * sg);
        acc[0] += d;
        acc[1] += d * log_n;
        // d/dsg of (-r^2/(2 sg^2) - ln sg) = r^2/sg^3 - 1/sg; stored per unit sg
        acc[2] += r * r / (sg * sg * sg) - 1.0 / sg;
    }

    /// Priors on the variance-function parameters; folds in accumulated gradients.
    fn gvf_prior(&self, x: &[f64], off: usize, g_gvf: [f64; 3], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for c in 0..2 {
            let (l, d) = normal_lpdf(x[off + c], 0.0, OMEGA_PRIOR_SD);
            lp += l;
            grad[off + c] += d + g_gvf[c];
        }
        let (sg, log_jac) = positive(x[off + 2]);
        let (l, d) = half_cauchy_lpdf(sg, GVF_SD_SCALE);
        lp += l + log_jac;
        grad[off + 2] += (d + g_gvf[2]) * sg + 1.0;
        lp
    }

    fn benchmark_term(&self, theta: &[f64], g_theta: &mut [f64]) -> f64 {
        let Some((spec, pop)) = &self.benchmark else { return 0.0 };
        let mut lp = 0.0;
        for (k, members) in spec.regions.members.iter().enumerate() {
            let n_k: f64 = members.iter().map(|&i| pop[i]).sum();
            let mut agg = 0.0;
            for &i in members {
                agg += self.mean_of(i, theta[i]).0 * pop[i] / n_k;
            }
            let sd = spec.epsilon * spec.var[k].sqrt();
            let (l, d) = normal_lpdf(agg, spec.c_hat[k], sd);
            lp += l;
            for &i in members {
                g_theta[i] += d * self.mean_of(i, theta[i]).1 * pop[i] / n_k;
            }
        }
        lp
    }
}

fn ln_choose(n: f64, k: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Binomial log mass of `y` successes in `n` trials at log-odds `theta`, and its derivative.
pub fn binomial_logit_lpmf(y: f64, n: f64, theta: f64) -> (f64, f64) {
    (ln_choose(n, y) + y * theta - n * log1p_exp(theta), y - n * inv_logit(theta))
}

impl LogDensity for AreaModel {
    fn dim(&self) -> usize {
        self.layout().dim
    }

    fn log_density(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let lay = self.layout();
        let m = self.m();
        let q = self.design.width();
        let theta = self.thetas(x, &lay);
        if theta.iter().any(|t| !t.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let mut g_theta = vec![0.0; m];
        let mut lp = self.observation(x, &theta, &mut g_theta, grad, &lay);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp += self.benchmark_term(&theta, &mut g_theta);

        // Back-propagate through the linking model.
        let sigma = x[lay.re].exp();
        let rho = self.rho_value(x, &lay);
        let mut g_log_sigma = 0.0;
        let mut g_rho = 0.0;
        for i in 0..m {
            let gt = g_theta[i];
            for (g, z) in grad[..q].iter_mut().zip(self.design.row(i)) {
                *g += gt * z;
            }
            g_log_sigma += gt * sigma * self.effect_unit(x, &lay, i, rho);
            match &self.linking.effect {
                AreaEffect::Iid => grad[lay.s + i] += gt * sigma,
                AreaEffect::Bym2 { graph, .. } => {
                    let u_idx = lay.u.unwrap() + i;
                    if graph.is_island(i) {
                        grad[u_idx] += gt * sigma;
                    } else {
                        let kappa = graph.kappa_of(i);
                        let a = (rho / kappa).sqrt();
                        let b = (1.0 - rho).sqrt();
                        grad[lay.s + i] += gt * sigma * a;
                        grad[u_idx] += gt * sigma * b;
                        // d a/d rho = 1/(2 sqrt(rho kappa)); d b/d rho = -1/(2 b)
                        let da = if rho > 0.0 { 0.5 / (rho * kappa).sqrt() } else { 0.0 };
                        let db = if b > 0.0 { -0.5 / b } else { 0.0 };
                        g_rho += gt * sigma * (x[lay.s + i] * da + x[u_idx] * db);
                    }
                }
            }
        }

        let (l, d) = student_t_lpdf(x[0], 3.0, 1.0);
        lp += l;
        grad[0] += d;
        for c in 1..q {
            let (l, d) = normal_lpdf(x[c], 0.0, LAMBDA_PRIOR_SD);
            lp += l;
            grad[c] += d;
        }
        let (l, d) = half_normal_lpdf(sigma, self.linking.sd_prior);
        lp += l + x[lay.re];
        grad[lay.re] += g_log_sigma + d * sigma + 1.0;

        match &self.linking.effect {
            AreaEffect::Iid => {
                for i in 0..m {
                    let z = x[lay.s + i];
                    lp -= 0.5 * z * z + LN_SQRT_2PI;
                    grad[lay.s + i] -= z;
                }
            }
            AreaEffect::Bym2 { graph, rho: prior } => {
                lp += icar_log_prior(&x[lay.s..lay.s + m], graph, Some(&mut grad[lay.s..lay.s + m]));
                let u0 = lay.u.unwrap();
                for i in 0..m {
                    let u = x[u0 + i];
                    lp -= 0.5 * u * u + LN_SQRT_2PI;
                    grad[u0 + i] -= u;
                }
                if let Some(ri) = lay.rho {
                    let (r, log_jac, dlog_jac) = unit_interval(x[ri]);
                    let dr = r * (1.0 - r);
                    lp += log_jac;
                    let mut d_prior = 0.0;
                    if let RhoPrior::Beta { a, b } = prior {
                        lp += (a - 1.0) * r.ln() + (b - 1.0) * (1.0 - r).ln() - ln_beta(*a, *b);
                        d_prior = (a - 1.0) / r - (b - 1.0) / (1.0 - r);
                    }
                    grad[ri] += (g_rho + d_prior) * dr + dlog_jac;
                }
            }
        }
        lp
    }

    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.area_ids.iter().map(|id| format!("mu[{id}]")).collect();
        names.extend(self.design.names.iter().cloned());
        match &self.linking.effect {
            AreaEffect::Iid => names.push("sigma_v".into()),
            AreaEffect::Bym2 { rho, .. } => {
                names.push("sigma_delta".into());
                if !matches!(rho, RhoPrior::Fixed(_)) {
                    names.push("rho".into());
                }
            }
        }
        if self.obs.has_gvf() {
            names.extend(["omega0", "omega1", "sigma_gvf"].map(String::from));
        }
        names
    }

    /// Area proportions, then coefficients and scale parameters.
    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        let lay = self.layout();
        let theta = self.thetas(x, &lay);
        let mut out: Vec<f64> = theta.iter().enumerate().map(|(i, &t)| self.mean_of(i, t).0).collect();
        out.extend_from_slice(&x[..self.design.width()]);
        out.push(x[lay.re].exp());
        if let Some(ri) = lay.rho {
            out.push(inv_logit(x[ri]));
        }
        if self.obs.has_gvf() {
            let off = lay.dim - 3;
            out.push(x[off]);
            out.push(x[off + 1]);
            out.push(x[off + 2].exp());
        }
        out
    }

    fn init_radius(&self) -> f64 {
        1.0
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Per-area posterior summary row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaSummary {
    pub area_id: u32,
    pub median: f64,
    pub hdi_lo: f64,
    pub hdi_hi: f64,
    pub sampled: bool,
    pub stable: bool,
}

/// Posterior draws of the area proportions for all areas from one model.
#[derive(Debug, Clone)]
pub struct AreaEstimates {
    pub model: ModelKind,
    pub area_ids: Vec<u32>,
    pub sampled: Vec<bool>,
    pub stable: Vec<bool>,
    /// The first `area_ids.len()` columns are the area proportions.
    pub posterior: PosteriorMatrix,
}

impl AreaEstimates {
    pub fn m(&self) -> usize {
        self.area_ids.len()
    }

    pub fn mu_draws(&self, i: usize) -> Vec<f64> {
        self.posterior.pooled(i)
    }

    pub fn max_rhat(&self) -> f64 {
        self.posterior.max_rhat(0..self.m())
    }

    pub fn converged(&self) -> bool {
        self.posterior.converged(0..self.m())
    }

    pub fn summaries(&self, mass: f64) -> Result<Vec<AreaSummary>> {
        (0..self.m())
            .map(|i| {
                let d = self.mu_draws(i);
                let (lo, hi) = hdi(&d, mass)?;
                Ok(AreaSummary {
                    area_id: self.area_ids[i],
                    median: median(&d),
                    hdi_lo: lo,
                    hdi_hi: hi,
                    sampled: self.sampled[i],
                    stable: self.stable[i],
                })
            })
            .collect()
    }

    /// `area_id,median,hdi_lo,hdi_hi,sampled,stable` with 95% intervals.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for s in self.summaries(0.95)? {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}
