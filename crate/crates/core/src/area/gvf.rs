//! Generalized variance functions.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Back-transform used when imputing from the `log(sqrt(gamma))` scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GvfCorrection {
    /// Lognormal mean: `exp(2 L w + 2 sigma^2)`.
    #[default]
    Corrected,
    /// Plain inverse: `exp(2 L w)`.
    Naive,
}

/// Imputed variance at sample size `n` from `log(sqrt(gamma)) ~ N(w0 + w1 log n, sigma^2)`.
pub fn gvf_impute(omega: [f64; 2], sigma: f64, n: f64, correction: GvfCorrection) -> f64 {
    gvf_impute_with_grad(omega, sigma, n, correction).0
}

/// As [`gvf_impute`], also returning derivatives in `(w0, w1, sigma)`.
pub fn gvf_impute_with_grad(omega: [f64; 2], sigma: f64, n: f64, correction: GvfCorrection) -> (f64, [f64; 3]) {
    let ln = n.ln();
    let lin = omega[0] + omega[1] * ln;
    let (exponent, ds) = match correction {
        GvfCorrection::Corrected => (2.0 * lin + 2.0 * sigma * sigma, 4.0 * sigma),
        GvfCorrection::Naive => (2.0 * lin, 0.0),
    };
    let g = exponent.exp();
    (g, [2.0 * g, 2.0 * g * ln, g * ds])
}

/// The link used for the Beta model's variances, `log(psi / (0.25 + psi))`.
pub fn beta_gvf_link(psi: f64) -> f64 {
    (psi / (0.25 + psi)).ln()
}

pub fn beta_gvf_inverse(eta: f64) -> f64 {
    let e = eta.exp();
    0.25 * e / (1.0 - e)
}

/// Ordinary least squares of `y` on `(1, x)`, returning `(intercept, slope)`.
pub fn ols_line(x: &[f64], y: &[f64]) -> Result<[f64; 2]> {
    if x.len() < 2 {
        return Err(Error::invalid("at least two points are required for a variance function"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        // constant covariate: intercept-only fit
        return Ok([my, 0.0]);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok([my - slope * mx, slope])
}

/// Largest variance the Beta model can accommodate with a non-empty mean range.
pub const MAX_BETA_PSI: f64 = 0.2499;

/// Plug-in Beta-model variance function: least squares of the link on
/// `log N`, fitted over `(N, psi)` training pairs, evaluated at `population`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaGvf {
    pub coef: [f64; 2],
}

impl BetaGvf {
    pub fn fit(populations: &[f64], psi: &[f64]) -> Result<Self> {
        let x: Vec<f64> = populations.iter().map(|n| n.ln()).collect();
        let y: Vec<f64> = psi.iter().map(|&p| beta_gvf_link(p)).collect();
        Ok(Self { coef: ols_line(&x, &y)? })
    }

    /// Prediction, kept inside the Beta model's admissible range `(0, 0.25)`.
    pub fn predict(&self, population: f64) -> f64 {
        let eta = (self.coef[0] + self.coef[1] * population.ln()).min(-1e-9);
        beta_gvf_inverse(eta).clamp(1e-8, MAX_BETA_PSI)
    }
}
