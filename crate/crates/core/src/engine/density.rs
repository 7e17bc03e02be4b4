//! Log densities (up to what the models need) together with their
//! derivatives, plus the unconstraining transforms.

use std::f64::consts::PI;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `log N(x | mu, sd)` and its derivative with respect to `x`.
#[inline]
pub fn normal_lpdf(x: f64, mu: f64, sd: f64) -> (f64, f64) {
    let z = (x - mu) / sd;
    (-0.5 * z * z - sd.ln() - LN_SQRT_2PI, -z / sd)
}

/// `log N(x | mu, var)` with derivatives in `x` and in `var`.
#[inline]
pub fn normal_lpdf_var(x: f64, mu: f64, var: f64) -> (f64, f64, f64) {
    let d = x - mu;
    let lp = -0.5 * d * d / var - 0.5 * var.ln() - LN_SQRT_2PI;
    (lp, -d / var, 0.5 * d * d / (var * var) - 0.5 / var)
}

/// Student-t log density with location 0 and the given scale, plus derivative.
#[inline]
pub fn student_t_lpdf(x: f64, df: f64, scale: f64) -> (f64, f64) {
    let z = x / scale;
    let norm = statrs::function::gamma::ln_gamma((df + 1.0) / 2.0)
        - statrs::function::gamma::ln_gamma(df / 2.0)
        - 0.5 * (df * PI).ln()
        - scale.ln();
    let lp = norm - (df + 1.0) / 2.0 * (1.0 + z * z / df).ln();
    let d = -(df + 1.0) * z / (scale * (df + z * z));
    (lp, d)
}

/// Half-normal log density for `x > 0` (normalising constant included).
#[inline]
pub fn half_normal_lpdf(x: f64, sd: f64) -> (f64, f64) {
    let (lp, d) = normal_lpdf(x, 0.0, sd);
    (lp + std::f64::consts::LN_2, d)
}

/// Half-Cauchy log density for `x > 0`.
#[inline]
pub fn half_cauchy_lpdf(x: f64, scale: f64) -> (f64, f64) {
    let z = x / scale;
    let lp = (2.0 / (PI * scale)).ln() - (1.0 + z * z).ln();
    (lp, -2.0 * z / (scale * (1.0 + z * z)))
}

/// Beta log density in `x` for shapes `(a, b)` and its derivatives in `a` and `b`.
pub fn beta_lpdf(x: f64, a: f64, b: f64) -> (f64, f64, f64) {
    use statrs::function::gamma::{digamma, ln_gamma};
    let lx = x.ln();
    let l1x = (1.0 - x).ln();
    let lp = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * lx + (b - 1.0) * l1x;
    let dab = digamma(a + b);
    (lp, dab - digamma(a) + lx, dab - digamma(b) + l1x)
}

/// Log of `1 + exp(x)` without overflow.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Positive parameter from an unconstrained value: `(exp(u), log|Jacobian| = u)`.
#[inline]
pub fn positive(u: f64) -> (f64, f64) {
    (u.exp(), u)
}

/// Unit-interval parameter from an unconstrained value, with the log-Jacobian
/// `log p(1-p)` and that Jacobian's derivative `1 - 2p`.
#[inline]
pub fn unit_interval(u: f64) -> (f64, f64, f64) {
    let p = crate::survey::inv_logit(u);
    let log_jac = -log1p_exp(-u) - log1p_exp(u);
    (p, log_jac, 1.0 - 2.0 * p)
}
