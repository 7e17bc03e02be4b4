//! Evaluation metrics: posterior-draw relative bias and error, interval
//! coverage, frequentist bias/variance/MSE over replicates, stage-one
//! summary statistics, interval overlap and odds-ratio exceedance.

use crate::error::{Error, Result};
use crate::stage1::{alc_from, median, S1Summaries};
use crate::survey::DirectEstimates;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

fn check_truth(truth: f64) -> Result<()> {
    if truth == 0.0 {
        Err(Error::ZeroTruth)
    } else {
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Absolute relative bias of posterior draws.
pub fn arb(draws: &[f64], truth: f64) -> Result<f64> {
    check_truth(truth)?;
    let bias = draws.iter().map(|d| d - truth).sum::<f64>() / draws.len() as f64;
    Ok((bias / truth).abs())
}

/// Relative root mean square error of posterior draws.
pub fn rrmse(draws: &[f64], truth: f64) -> Result<f64> {
    check_truth(truth)?;
    let ms = draws.iter().map(|d| (d - truth).powi(2)).sum::<f64>() / draws.len() as f64;
    Ok(ms.sqrt() / truth)
}

/// Fraction of intervals `[lo, hi]` containing their truth.
pub fn coverage(intervals: &[(f64, f64)], truths: &[f64]) -> Result<f64> {
    if intervals.len() != truths.len() {
        return Err(Error::invalid("one truth per interval is required"));
    }
    if intervals.is_empty() {
        return Err(Error::invalid("coverage of no intervals"));
    }
    let hits = intervals.iter().zip(truths).filter(|((lo, hi), t)| lo <= *t && *t <= hi).count();
    Ok(hits as f64 / intervals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqMse {
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
}

/// Bias, variance and MSE of posterior medians (`medians[d][i]`) over replicates.
pub fn freq_mse(medians: &[Vec<f64>], truth: &[f64]) -> Result<FreqMse> {
    let d = medians.len();
    if d < 2 {
        return Err(Error::invalid("at least two replicates are required"));
    }
    if medians.iter().any(|r| r.len() != truth.len()) || truth.is_empty() {
        return Err(Error::invalid("medians do not match the truths"));
    }
    let m = truth.len() as f64;
    let mut bias = 0.0;
    let mut variance = 0.0;
    for (i, &t) in truth.iter().enumerate() {
        let col: Vec<f64> = medians.iter().map(|r| r[i]).collect();
        let avg = mean(&col);
        bias += (avg - t) / m;
        variance += col.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (d as f64 - 1.0) / m;
    }
    Ok(FreqMse { bias, variance, mse: bias * bias + variance })
}

/// Stage-one summary statistics of one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct S1Diagnostics {
    pub pct_unstable: f64,
    pub alc: f64,
    pub pct_var_increase: f64,
    pub pct_mab_reduction: f64,
}

/// `truth` is indexed by area id minus one.
pub fn table4_summaries(direct: &DirectEstimates, s1: &S1Summaries, truth: &[f64]) -> Result<S1Diagnostics> {
    if direct.areas.is_empty() {
        return Err(Error::invalid("no sampled areas"));
    }
    let pct_unstable = 100.0 * direct.unstable_fraction();
    let alc = alc_from(s1, direct)?;
    let mut ratios = Vec::new();
    let mut mab_d = 0.0;
    let mut mab_s1 = 0.0;
    for a in &s1.areas {
        let d = direct.get(a.area_id).ok_or_else(|| Error::invalid(format!("no direct estimate for area {}", a.area_id)))?;
        let t = truth[a.area_id as usize - 1];
        mab_d += (d.mu - t).abs();
        mab_s1 += (a.mu_median() - t).abs();
        if let Some(g) = d.gamma {
            ratios.push(100.0 * ((a.gamma_bar + a.var_theta) / g - 1.0));
        }
    }
    if ratios.is_empty() {
        return Err(Error::invalid("no stable areas for the variance comparison"));
    }
    let pct_mab_reduction = if mab_d > 0.0 { 100.0 * (1.0 - mab_s1 / mab_d) } else { 0.0 };
    Ok(S1Diagnostics { pct_unstable, alc, pct_var_increase: median(&ratios), pct_mab_reduction })
}

/// Median with lower and upper quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

pub fn spread(values: &[f64]) -> Result<Spread> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("spread needs finite values"));
    }
    let mut data = Data::new(values.to_vec());
    Ok(Spread { median: median(values), q1: data.lower_quartile(), q3: data.upper_quartile() })
}

/// Share of the model interval lying inside the direct interval.
pub fn overlap_probability(model: (f64, f64), direct: (f64, f64)) -> f64 {
    let len = model.1 - model.0;
    if len <= 0.0 {
        return f64::from(u8::from(direct.0 <= model.0 && model.0 <= direct.1));
    }
    let inter = (model.1.min(direct.1) - model.0.max(direct.0)).max(0.0);
    inter / len
}

/// Mean of overlap probabilities weighted by inverse direct standard deviations.
pub fn weighted_overlap(overlaps: &[f64], direct_sd: &[f64]) -> Result<f64> {
    if overlaps.len() != direct_sd.len() || overlaps.is_empty() {
        return Err(Error::invalid("one direct sd per overlap is required"));
    }
    if direct_sd.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("direct standard deviations must be positive"));
    }
    let w: Vec<f64> = direct_sd.iter().map(|s| 1.0 / s).collect();
    Ok(overlaps.iter().zip(&w).map(|(o, w)| o * w).sum::<f64>() / w.iter().sum::<f64>())
}

/// Odds-ratio draws against an overall proportion, and the share of draws above one.
pub fn odds_ratio_ep(mu_draws: &[f64], overall: f64) -> Result<(Vec<f64>, f64)> {
    if !(overall > 0.0 && overall < 1.0) {
        return Err(Error::invalid("overall proportion must lie in (0, 1)"));
    }
    if mu_draws.is_empty() {
        return Err(Error::invalid("no draws"));
    }
    let base = overall / (1.0 - overall);
    let or: Vec<f64> = mu_draws.iter().map(|m| m / (1.0 - m) / base).collect();
    let ep = or.iter().filter(|&&o| o > 1.0).count() as f64 / or.len() as f64;
    Ok((or, ep))
}

/// Exceedance probabilities at or beyond these thresholds are reported as notable.
pub const EP_HIGH: f64 = 0.8;
pub const EP_LOW: f64 = 0.2;

pub fn ep_flag(ep: f64) -> Option<&'static str> {
    if ep > EP_HIGH {
        Some("high")
    } else if ep < EP_LOW {
        Some("low")
    } else {
        None
    }
}
