use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split R-hat (non-rank-normalised): each chain is halved, then
/// `sqrt(var_plus / W)` over the resulting half-chains.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::invalid("split R-hat needs at least two chains"));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return Err(Error::invalid("split R-hat needs at least four draws per chain"));
    }
    let half = n / 2;
    let pieces: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..n]])
        .collect();
    let means: Vec<f64> = pieces.iter().map(|p| mean(p)).collect();
    let vars: Vec<f64> = pieces.iter().zip(&means).map(|(p, &m)| sample_var(p, m)).collect();
    let w = mean(&vars);
    if !(w > 0.0) {
        return Err(Error::DegenerateChains);
    }
    let grand = mean(&means);
    let k = pieces.len() as f64;
    let len = half as f64;
    let b = len / (k - 1.0) * means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>();
    let var_plus = (len - 1.0) / len * w + b / len;
    Ok((var_plus / w).sqrt())
}

fn autocovariance(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|t| (x[t] - m) * (x[t + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
pub fn ess(chains: &[&[f64]]) -> Result<f64> {
    let c = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if c == 0 || n < 4 {
        return Err(Error::invalid("ESS needs at least one chain with four draws"));
    }
    let chains: Vec<&[f64]> = chains.iter().map(|ch| &ch[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|ch| mean(ch)).collect();
    let acov0: Vec<f64> = chains.iter().zip(&means).map(|(ch, &m)| autocovariance(ch, m, 0)).collect();
    let nf = n as f64;
    let w = acov0.iter().map(|a| a * nf / (nf - 1.0)).sum::<f64>() / c as f64;
    if !(w > 0.0) {
        return Err(Error::DegenerateChains);
    }
    let between = if c > 1 {
        let g = mean(&means);
        means.iter().map(|m| (m - g) * (m - g)).sum::<f64>() / (c as f64 - 1.0)
    } else {
        0.0
    };
    let var_plus = w * (nf - 1.0) / nf + between;
    let rho = |lag: usize| -> f64 {
        let acov = chains
            .iter()
            .zip(&means)
            .map(|(ch, &m)| autocovariance(ch, m, lag))
            .sum::<f64>()
            / c as f64;
        1.0 - (w - acov) / var_plus
    };
    let mut pairs = Vec::new();
    let mut lag = 0;
    while lag + 1 < n {
        let p = rho(lag) + rho(lag + 1);
        if p <= 0.0 {
            break;
        }
        pairs.push(p);
        lag += 2;
    }
    for k in 1..pairs.len() {
        if pairs[k] > pairs[k - 1] {
            pairs[k] = pairs[k - 1];
        }
    }
    let tau = (-1.0 + 2.0 * pairs.iter().sum::<f64>()).max(1.0 / (c as f64 * nf).log10().max(1.0));
    Ok(c as f64 * nf / tau)
}

/// Shortest window holding `ceil(mass * T)` sorted draws; ties go to the lowest window.
pub fn hdi(draws: &[f64], mass: f64) -> Result<(f64, f64)> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::invalid(format!("HDI mass {mass} outside (0, 1)")));
    }
    if draws.len() < 20 {
        return Err(Error::invalid("HDI needs at least 20 draws"));
    }
    if draws.iter().any(|d| d.is_nan()) {
        return Err(Error::invalid("HDI input contains NaN"));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t = sorted.len();
    let k = ((mass * t as f64).ceil() as usize).clamp(1, t);
    let (mut best, mut width) = (0, f64::INFINITY);
    for i in 0..=t - k {
        let w = sorted[i + k - 1] - sorted[i];
        if w < width {
            width = w;
            best = i;
        }
    }
    Ok((sorted[best], sorted[best + k - 1]))
}
