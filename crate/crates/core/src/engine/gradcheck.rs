use super::LogDensity;
use crate::error::{Error, Result};
use rand::Rng;

/// Largest mixed relative error `|fd - g| / max(1, |g|)` between central
/// finite differences and the analytic gradient.
pub fn gradient_check<M: LogDensity + ?Sized>(model: &M, point: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step {eps} must be positive")));
    }
    let dim = model.dim();
    if point.len() != dim {
        return Err(Error::invalid("point has the wrong dimension"));
    }
    let mut grad = vec![0.0; dim];
    let lp = model.log_density(point, &mut grad);
    if !lp.is_finite() {
        return Err(Error::invalid("log density is not finite at the check point"));
    }
    let mut scratch = vec![0.0; dim];
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for k in 0..dim {
        x[k] = point[k] + eps;
        let up = model.log_density(&x, &mut scratch);
        x[k] = point[k] - eps;
        let down = model.log_density(&x, &mut scratch);
        x[k] = point[k];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::invalid(format!("non-finite log density when perturbing coordinate {k}")));
        }
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max((fd - grad[k]).abs() / grad[k].abs().max(1.0));
    }
    Ok(worst)
}

/// Runs [`gradient_check`] at `points` random points drawn uniformly from the
/// model's initialisation box and returns the worst error.
pub fn check_gradients_at_random_points<M: LogDensity + ?Sized>(model: &M, points: usize, seed: u64) -> Result<f64> {
    let mut rng = crate::rng::stream(seed, &[crate::rng::purpose::INIT, 0xC4EC]);
    let radius = model.init_radius().min(1.0);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-radius..=radius)).collect();
        worst = worst.max(gradient_check(model, &x, 1e-6)?);
    }
    Ok(worst)
}
