use super::posterior::{ChainStats, PosteriorMatrix, SamplerDiagnostics};
use super::LogDensity;
use crate::error::{Error, Result};
use crate::rng::{self, purpose, StreamRng};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Energy error beyond which a trajectory counts as divergent.
const MAX_ENERGY_ERROR: f64 = 1000.0;
const MAX_STEP_SIZE: f64 = 1e7;
const MIN_STEP_SIZE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// Mean integration time of a trajectory; each iteration draws the
    /// actual length uniformly from `[0.5, 1.5]` times this value.
    pub path_length: f64,
    pub max_steps: usize,
    pub adapt_metric: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 500,
            draws: 500,
            seed: 1,
            target_accept: 0.8,
            path_length: 2.0,
            max_steps: 512,
            adapt_metric: true,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn total_draws(&self) -> usize {
        self.chains * self.draws
    }
}

struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    count: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            target,
            h_bar: 0.0,
            log_eps: eps.ln(),
            log_eps_bar: 0.0,
            count: 0.0,
        }
    }

    fn update(&mut self, accept: f64) -> f64 {
        self.count += 1.0;
        let eta = 1.0 / (self.count + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept);
        self.log_eps = self.mu - self.count.sqrt() / Self::GAMMA * self.h_bar;
        let x = self.count.powf(-Self::KAPPA);
        self.log_eps_bar = x * self.log_eps + (1.0 - x) * self.log_eps_bar;
        self.log_eps.exp().clamp(MIN_STEP_SIZE, MAX_STEP_SIZE)
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp().clamp(MIN_STEP_SIZE, MAX_STEP_SIZE)
    }
}

/// Welford accumulator for the diagonal metric.
struct VarianceEstimator {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceEstimator {
    fn new(dim: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    /// Regularised variance, shrunk toward 1e-3 as in common practice.
    fn variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| (n / (n + 5.0)) * (s / (n - 1.0)) + 1e-3 * (5.0 / (n + 5.0)))
            .collect()
    }
}

/// Windows (start, end) at whose end the metric is re-estimated.
fn metric_windows(warmup: usize) -> Vec<(usize, usize)> {
    let (mut init, mut term, mut base) = (75usize, 50usize, 25usize);
    if warmup < 20 {
        return Vec::new();
    }
    if init + term + base > warmup {
        init = warmup * 15 / 100;
        term = warmup / 10;
        base = warmup - init - term;
    }
    let last = warmup - term;
    let mut windows = Vec::new();
    let (mut start, mut size) = (init, base);
    while start < last {
        let mut end = start + size;
        if end + 2 * size > last {
            end = last;
        }
        windows.push((start, end));
        start = end;
        size *= 2;
    }
    windows
}

struct Chain<'a, M: LogDensity + ?Sized> {
    model: &'a M,
    rng: StreamRng,
    inv_metric: Vec<f64>,
    x: Vec<f64>,
    grad: Vec<f64>,
    lp: f64,
    // scratch
    x_new: Vec<f64>,
    g_new: Vec<f64>,
    p: Vec<f64>,
}

struct Transition {
    accept_prob: f64,
    divergent: bool,
    steps: usize,
}

impl<'a, M: LogDensity + ?Sized> Chain<'a, M> {
    fn init(model: &'a M, rng: StreamRng) -> Result<Self> {
        let dim = model.dim();
        let mut chain = Chain {
            model,
            rng,
            inv_metric: vec![1.0; dim],
            x: vec![0.0; dim],
            grad: vec![0.0; dim],
            lp: f64::NEG_INFINITY,
            x_new: vec![0.0; dim],
            g_new: vec![0.0; dim],
            p: vec![0.0; dim],
        };
        let radius = model.init_radius();
        for _ in 0..100 {
            for v in chain.x.iter_mut() {
                *v = chain.rng.random_range(-radius..=radius);
            }
            chain.lp = model.log_density(&chain.x, &mut chain.grad);
            if chain.lp.is_finite() && chain.grad.iter().all(|g| g.is_finite()) {
                return Ok(chain);
            }
        }
        Err(Error::Sampler("no finite initial point found in 100 attempts".into()))
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn draw_momentum(&mut self) {
        for (p, m) in self.p.iter_mut().zip(&self.inv_metric) {
            let z: f64 = self.rng.sample(StandardNormal);
            *p = z / m.sqrt();
        }
    }

    /// Integrates `steps` leapfrog steps from the current state into the
    /// scratch buffers; returns the proposal's log density.
    fn leapfrog(&mut self, eps: f64, steps: usize) -> f64 {
        self.x_new.copy_from_slice(&self.x);
        self.g_new.copy_from_slice(&self.grad);
        let mut lp = self.lp;
        for _ in 0..steps {
            for (p, g) in self.p.iter_mut().zip(&self.g_new) {
                *p += 0.5 * eps * g;
            }
            for ((x, p), m) in self.x_new.iter_mut().zip(&self.p).zip(&self.inv_metric) {
                *x += eps * m * p;
            }
            lp = self.model.log_density(&self.x_new, &mut self.g_new);
            if !lp.is_finite() {
                return f64::NEG_INFINITY;
            }
            for (p, g) in self.p.iter_mut().zip(&self.g_new) {
                *p += 0.5 * eps * g;
            }
        }
        lp
    }

    fn transition(&mut self, eps: f64, steps: usize) -> Transition {
        self.draw_momentum();
        let h0 = -self.lp + self.kinetic(&self.p);
        let lp_new = self.leapfrog(eps, steps);
        let h1 = -lp_new + self.kinetic(&self.p);
        let delta = h1 - h0;
        if !delta.is_finite() || delta > MAX_ENERGY_ERROR {
            return Transition { accept_prob: 0.0, divergent: true, steps };
        }
        let accept_prob = (-delta).exp().min(1.0);
        if self.rng.random::<f64>() < accept_prob {
            std::mem::swap(&mut self.x, &mut self.x_new);
            std::mem::swap(&mut self.grad, &mut self.g_new);
            self.lp = lp_new;
        }
        Transition { accept_prob, divergent: false, steps }
    }

    /// Doubles or halves a trial step until one-step acceptance crosses 1/2.
    /// Returns `None` when the step size runs off to its upper bound.
    fn reasonable_step(&mut self, mut eps: f64) -> Option<f64> {
        let probe = |chain: &mut Self, eps: f64| -> f64 {
            chain.draw_momentum();
            let h0 = -chain.lp + chain.kinetic(&chain.p);
            let lp = chain.leapfrog(eps, 1);
            let h1 = -lp + chain.kinetic(&chain.p);
            let d = h0 - h1;
            if d.is_finite() { d } else { f64::NEG_INFINITY }
        };
        let log_half = 0.5f64.ln();
        let first = probe(self, eps);
        let dir = if first > log_half { 1.0 } else { -1.0 };
        for _ in 0..100 {
            let d = probe(self, eps);
            if dir * d <= dir * log_half {
                break;
            }
            eps *= 2f64.powf(dir);
            if eps >= MAX_STEP_SIZE {
                return None;
            }
            if eps <= MIN_STEP_SIZE {
                return Some(MIN_STEP_SIZE);
            }
        }
        Some(eps)
    }

    fn steps_for(&mut self, eps: f64, path_length: f64, max_steps: usize) -> usize {
        let jitter: f64 = self.rng.random_range(0.5..1.5);
        ((jitter * path_length / eps).ceil() as usize).clamp(1, max_steps)
    }
}

struct ChainOutput {
    draws: Vec<f64>,
    stats: ChainStats,
    flags: Vec<String>,
}

fn run_chain<M: LogDensity + ?Sized>(model: &M, config: &SamplerConfig, chain_id: usize) -> Result<ChainOutput> {
    let rng = rng::stream(config.seed, &[purpose::CHAIN, chain_id as u64]);
    let mut chain = Chain::init(model, rng)?;
    let mut flags = Vec::new();
    let mut degenerate = false;
    let mut eps = match chain.reasonable_step(1.0) {
        Some(e) => e,
        None => {
            degenerate = true;
            MAX_STEP_SIZE
        }
    };
    let mut adapter = DualAveraging::new(eps, config.target_accept);
    let windows = if config.adapt_metric { metric_windows(config.warmup) } else { Vec::new() };
    let mut window_idx = 0;
    let mut estimator = VarianceEstimator::new(model.dim());

    for iter in 0..config.warmup {
        let steps = chain.steps_for(eps, config.path_length, config.max_steps);
        let tr = chain.transition(eps, steps);
        eps = adapter.update(tr.accept_prob);
        if let Some(&(start, end)) = windows.get(window_idx) {
            if iter >= start && iter < end {
                estimator.add(&chain.x);
            }
            if iter + 1 == end {
                chain.inv_metric = estimator.variance();
                estimator = VarianceEstimator::new(model.dim());
                window_idx += 1;
                eps = match chain.reasonable_step(eps) {
                    Some(e) => e,
                    None => {
                        degenerate = true;
                        MAX_STEP_SIZE
                    }
                };
                adapter = DualAveraging::new(eps, config.target_accept);
            }
        }
    }
    if config.warmup > 0 {
        eps = adapter.final_step();
    }
    if degenerate || eps >= MAX_STEP_SIZE * 0.5 {
        flags.push(format!("chain {chain_id}: step size diverged; target looks flat or improper"));
    }

    let names_len = model.param_names().len();
    let mut draws = Vec::with_capacity(config.draws * names_len);
    let (mut accepted, mut divergences, mut accept_sum, mut steps_sum) = (0usize, 0usize, 0.0, 0usize);
    for _ in 0..config.draws {
        let before = chain.lp;
        let x_before = chain.x.clone();
        let steps = chain.steps_for(eps, config.path_length, config.max_steps);
        let tr = chain.transition(eps, steps);
        accept_sum += tr.accept_prob;
        steps_sum += tr.steps;
        if tr.divergent {
            divergences += 1;
        }
        if chain.x != x_before || chain.lp != before {
            accepted += 1;
        }
        let constrained = model.constrain(&chain.x);
        debug_assert_eq!(constrained.len(), names_len);
        draws.extend_from_slice(&constrained);
    }
    if config.draws > 0 && accepted == 0 {
        return Err(Error::Sampler(format!("chain {chain_id} rejected every proposal")));
    }
    let n = config.draws.max(1) as f64;
    Ok(ChainOutput {
        draws,
        stats: ChainStats {
            step_size: eps,
            accept_rate: accept_sum / n,
            divergences,
            mean_steps: steps_sum as f64 / n,
        },
        flags,
    })
}

/// Runs `config.chains` independent chains (in parallel) and collects their
/// post-warmup draws. Identical inputs give bit-identical output.
pub fn sample<M: LogDensity + ?Sized>(model: &M, config: &SamplerConfig) -> Result<PosteriorMatrix> {
    if config.chains == 0 {
        return Err(Error::config("at least one chain is required"));
    }
    let outputs: Vec<Result<ChainOutput>> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(model, config, c))
        .collect();
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;
    let names = model.param_names();
    let mut values = Vec::with_capacity(config.chains * config.draws * names.len());
    let mut diagnostics = SamplerDiagnostics::default();
    let mut total_div = 0;
    for out in outputs {
        values.extend(out.draws);
        total_div += out.stats.divergences;
        diagnostics.chains.push(out.stats);
        diagnostics.flags.extend(out.flags);
    }
    let total = (config.chains * config.draws).max(1) as f64;
    diagnostics.divergent_fraction = total_div as f64 / total;
    if diagnostics.divergent_fraction > 0.01 {
        diagnostics
            .flags
            .push(format!("{:.1}% of post-warmup iterations diverged", 100.0 * diagnostics.divergent_fraction));
    }
    let mut posterior = PosteriorMatrix::new(names, config.chains, config.draws, values);
    posterior.diagnostics = diagnostics;
    Ok(posterior)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_cover_adaptation_interval() {
        let w = metric_windows(500);
        assert_eq!(w.first().unwrap().0, 75);
        assert_eq!(w.last().unwrap().1, 450);
        for pair in w.windows(2) {
            assert_eq!(pair[0].1, pair[1].0);
        }
        let small = metric_windows(100);
        assert_eq!(small.first().unwrap().0, 15);
        assert_eq!(small.last().unwrap().1, 90);
        assert!(metric_windows(10).is_empty());
    }

    struct Gaussian {
        mean: Vec<f64>,
        // precision matrix, row-major
        prec: Vec<f64>,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.mean.len()
        }
        fn log_density(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let d = self.dim();
            let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
            let mut lp = 0.0;
            for i in 0..d {
                let pr: f64 = (0..d).map(|j| self.prec[i * d + j] * r[j]).sum();
                grad[i] = -pr;
                lp -= 0.5 * r[i] * pr;
            }
            lp
        }
        fn param_names(&self) -> Vec<String> {
            (0..self.dim()).map(|i| format!("x{i}")).collect()
        }
    }

    struct Flat;

    impl LogDensity for Flat {
        fn dim(&self) -> usize {
            1
        }
        fn log_density(&self, _x: &[f64], grad: &mut [f64]) -> f64 {
            grad[0] = 0.0;
            0.0
        }
        fn param_names(&self) -> Vec<String> {
            vec!["x".into()]
        }
    }

    fn mean_sd(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    }

    #[test]
    fn standard_normal_moments() {
        let model = Gaussian { mean: vec![0.0], prec: vec![1.0] };
        let post = sample(&model, &SamplerConfig { seed: 11, ..Default::default() }).unwrap();
        let (m, s) = mean_sd(&post.pooled(0));
        assert!(m.abs() < 0.1, "mean {m}");
        assert!((s - 1.0).abs() < 0.08, "sd {s}");
        assert!(post.rhat(0) < RHAT);
        assert!(post.diagnostics.is_clean());
    }

    #[test]
    fn conjugate_normal_normal() {
        // prior N(0,1), one observation y=1 with unit variance: posterior N(1/2, 1/2)
        let model = Gaussian { mean: vec![0.5], prec: vec![2.0] };
        let cfg = SamplerConfig { seed: 5, draws: 2000, ..Default::default() };
        let (m, s) = mean_sd(&sample(&model, &cfg).unwrap().pooled(0));
        assert!((m - 0.5).abs() < 0.03, "mean {m}");
        assert!((s - 0.5f64.sqrt()).abs() < 0.03, "sd {s}");
    }

    #[test]
    fn correlated_gaussian_covariance() {
        // covariance [[1, .8], [.8, 1]]; precision is its inverse
        let det = 1.0 - 0.64;
        let model = Gaussian { mean: vec![1.0, -1.0], prec: vec![1.0 / det, -0.8 / det, -0.8 / det, 1.0 / det] };
        let cfg = SamplerConfig { seed: 3, draws: 5000, ..Default::default() };
        let post = sample(&model, &cfg).unwrap();
        let (a, b) = (post.pooled(0), post.pooled(1));
        let (ma, _) = mean_sd(&a);
        let (mb, _) = mean_sd(&b);
        let n = a.len() as f64 - 1.0;
        let caa = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let cbb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n;
        let cab = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let err = ((caa - 1.0).powi(2) + (cbb - 1.0).powi(2) + 2.0 * (cab - 0.8).powi(2)).sqrt();
        let norm = (2.0 + 2.0 * 0.64f64).sqrt();
        assert!(err / norm < 0.05, "relative Frobenius error {}", err / norm);
    }

    #[test]
    fn deterministic_given_seed() {
        let model = Gaussian { mean: vec![0.0, 2.0], prec: vec![1.0, 0.0, 0.0, 4.0] };
        let cfg = SamplerConfig { seed: 9, warmup: 100, draws: 50, ..Default::default() };
        let a = sample(&model, &cfg).unwrap();
        let b = sample(&model, &cfg).unwrap();
        assert_eq!(a.pooled(0), b.pooled(0));
        assert_eq!(a.pooled(1), b.pooled(1));
        let c = sample(&model, &cfg.with_seed(10)).unwrap();
        assert_ne!(a.pooled(0), c.pooled(0));
    }

    #[test]
    fn flat_target_is_flagged() {
        let cfg = SamplerConfig { warmup: 50, draws: 20, chains: 2, ..Default::default() };
        let post = sample(&Flat, &cfg).unwrap();
        assert!(!post.diagnostics.flags.is_empty());
    }

    #[test]
    fn zero_chains_rejected() {
        let cfg = SamplerConfig { chains: 0, ..Default::default() };
        assert!(sample(&Flat, &cfg).is_err());
    }

    const RHAT: f64 = super::super::RHAT_THRESHOLD;
}
