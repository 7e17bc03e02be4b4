//! Gradient-based MCMC: the log-density interface, a Hamiltonian sampler
//! with dual-averaging step size and diagonal metric adaptation, and the
//! convergence diagnostics used to gate fits.

pub mod density;
mod diagnostics;
mod gradcheck;
mod hmc;
mod posterior;

pub use diagnostics::{ess, hdi, split_rhat};
pub use gradcheck::{check_gradients_at_random_points, gradient_check};
pub use hmc::{sample, SamplerConfig};
pub use posterior::{ChainStats, PosteriorMatrix, SamplerDiagnostics};

/// Convergence threshold: any monitored quantity above this marks a fit unconverged.
pub const RHAT_THRESHOLD: f64 = 1.02;

/// A differentiable log density on an unconstrained parameter space.
///
/// Implementations fold any change-of-variable Jacobian into the returned
/// value. Returning a non-finite value signals a point outside the support;
/// the sampler treats it as a rejected (divergent) proposal.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    fn log_density(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Labels of the values returned by [`LogDensity::constrain`].
    fn param_names(&self) -> Vec<String>;

    /// Maps an unconstrained point to the stored (constrained) values.
    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    /// Half-width of the uniform box used for random initial points.
    fn init_radius(&self) -> f64 {
        2.0
    }
}
