//! Two-stage logistic-normal (TSLN) small area estimation for proportions.
//!
//! The crate bundles everything needed to run the method end to end:
//! design-based direct estimation ([`survey`]), a synthetic census and
//! informative-sample generator ([`sim`]), a gradient-based MCMC engine
//! ([`engine`]), the stage-one individual model ([`stage1`]), the area-level
//! models including stage two and the comparison baselines ([`area`],
//! [`stage2`], [`baselines`]), evaluation metrics ([`metrics`]) and the
//! replicate harness used by the command line tool ([`experiment`]).

#[cfg(test)]
#[macro_use]
mod testutil {
    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
            assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
        }};
    }
}

pub mod area;
pub mod baselines;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod rng;
pub mod sim;
pub mod stage1;
pub mod stage2;
pub mod survey;

pub use error::{Error, Result};
