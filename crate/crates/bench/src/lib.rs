//! Fixtures shared by the benchmarks in `benches/`.

use tsln_core::sim::{census_for, draw_informative_sample, ScenarioConfig};
use tsln_core::survey::{SurveySample, WeightSet};

/// Desk-scale rare-outcome sample, replicate 0.
pub fn desk_sample() -> (SurveySample, WeightSet) {
    let cfg = ScenarioConfig::desk_scale("sc3", 1).expect("preset");
    let census = census_for(&cfg).expect("census");
    let sample = draw_informative_sample(&census, &cfg, 0).expect("sample");
    let weights = WeightSet::from_sample(&sample);
    (sample, weights)
}

/// Deterministic fake stage-one probabilities, `draws` by `n`.
pub fn fake_draws(draws: usize, n: usize) -> Vec<Vec<f64>> {
    (0..draws)
        .map(|t| (0..n).map(|j| 0.05 + 0.9 * (((j * 31 + t * 17) % 97) as f64 / 97.0)).collect())
        .collect()
}
