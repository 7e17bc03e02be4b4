//! Survey data model and direct (design-based) estimation.
//!
//! Raw weights are the only weights stored. The area-normalised scaling
//! (used by the Hajek estimator and its variance) and the sample-scaled
//! scaling (used by pseudo-likelihood models) are derived on demand by
//! [`WeightSet::from_sample`].

mod io;

pub use io::{
    read_area_rows, read_areas, read_records, read_sample, write_area_rows, write_areas, write_records,
    write_sample, AreaRow,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Default perturbation applied to unstable direct estimates.
pub const DEFAULT_PERTURBATION: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub area_id: u32,
    pub y: u8,
    pub x_survey: u8,
    pub x_census: f64,
    pub w_raw: f64,
}

/// Area-level metadata: population size (when known) and the area covariate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaMeta {
    pub area_id: u32,
    pub population: Option<u64>,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct SurveySample {
    records: Vec<Record>,
    area_index: BTreeMap<u32, Vec<usize>>,
    areas: Vec<AreaMeta>,
}

impl SurveySample {
    /// Validates and indexes a sample. `areas` must list every area 1..=M exactly once.
    pub fn new(records: Vec<Record>, mut areas: Vec<AreaMeta>) -> Result<Self> {
        areas.sort_by_key(|a| a.area_id);
        for (k, a) in areas.iter().enumerate() {
            if a.area_id as usize != k + 1 {
                return Err(Error::invalid(format!(
                    "area metadata must cover ids 1..={} exactly; found id {} at position {}",
                    areas.len(),
                    a.area_id,
                    k + 1
                )));
            }
            if a.population == Some(0) {
                return Err(Error::invalid(format!("area {} has zero population", a.area_id)));
            }
        }
        let total = areas.len() as u32;
        let mut area_index: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (j, r) in records.iter().enumerate() {
            if r.area_id == 0 || r.area_id > total {
                return Err(Error::invalid(format!(
                    "record {j} has area id {} outside 1..={total}",
                    r.area_id
                )));
            }
            if !(r.w_raw > 0.0 && r.w_raw.is_finite()) {
                return Err(Error::invalid(format!("record {j} has non-positive weight {}", r.w_raw)));
            }
            if r.y > 1 {
                return Err(Error::invalid(format!("record {j} has non-binary outcome {}", r.y)));
            }
            if !r.x_census.is_finite() {
                return Err(Error::invalid(format!("record {j} has non-finite x_census")));
            }
            area_index.entry(r.area_id).or_default().push(j);
        }
        for (&id, idx) in &area_index {
            if let Some(pop) = areas[id as usize - 1].population {
                if idx.len() as u64 > pop {
                    return Err(Error::invalid(format!(
                        "area {id} has {} records but population {pop}",
                        idx.len()
                    )));
                }
            }
        }
        Ok(Self { records, area_index, areas })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn areas(&self) -> &[AreaMeta] {
        &self.areas
    }

    pub fn area(&self, area_id: u32) -> &AreaMeta {
        &self.areas[area_id as usize - 1]
    }

    /// Record indices for one area (empty slice for nonsampled areas).
    pub fn area_records(&self, area_id: u32) -> &[usize] {
        self.area_index.get(&area_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Sampled area ids in ascending order.
    pub fn sampled_areas(&self) -> Vec<u32> {
        self.area_index.keys().copied().collect()
    }

    pub fn is_sampled(&self, area_id: u32) -> bool {
        self.area_index.contains_key(&area_id)
    }

    /// Number of sampled areas (m).
    pub fn sampled_count(&self) -> usize {
        self.area_index.len()
    }

    /// Total number of areas (M).
    pub fn total_areas(&self) -> usize {
        self.areas.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn area_sample_size(&self, area_id: u32) -> usize {
        self.area_records(area_id).len()
    }
}

/// Derived weight scalings for every record.
#[derive(Debug, Clone)]
pub struct WeightSet {
    /// `w_raw * n_i / sum_{j in area} w_raw`; sums to n_i within each area.
    pub w_area: Vec<f64>,
    /// `w_raw * n / sum_all w_raw`; sums to n over the sample.
    pub w_sample: Vec<f64>,
}

impl WeightSet {
    pub fn from_sample(sample: &SurveySample) -> Self {
        let records = sample.records();
        let mut w_area = vec![0.0; records.len()];
        for id in sample.sampled_areas() {
            let idx = sample.area_records(id);
            let total: f64 = idx.iter().map(|&j| records[j].w_raw).sum();
            let n_i = idx.len() as f64;
            for &j in idx {
                w_area[j] = records[j].w_raw * n_i / total;
            }
        }
        let total: f64 = records.iter().map(|r| r.w_raw).sum();
        let n = records.len() as f64;
        let w_sample = records.iter().map(|r| r.w_raw * n / total).collect();
        Self { w_area, w_sample }
    }
}

/// Hajek ratio estimate from area-normalised weights.
pub fn hajek_estimate(y: &[u8], w_area: &[f64]) -> Result<f64> {
    debug_assert_eq!(y.len(), w_area.len());
    if y.is_empty() {
        return Err(Error::invalid("no records for area"));
    }
    let n = y.len() as f64;
    let total: f64 = y.iter().zip(w_area).map(|(&y, &w)| w * f64::from(y)).sum();
    // Normalisation guarantees [0, 1]; clamp absorbs rounding only.
    Ok((total / n).clamp(0.0, 1.0))
}

/// Finite-population correction `1 - n/N`; 1 when the population is unknown.
pub fn fpc(n: usize, population: Option<u64>) -> Result<f64> {
    match population {
        None => Ok(1.0),
        Some(pop) if (n as u64) > pop => Err(Error::invalid(format!(
            "sample size {n} exceeds population {pop}"
        ))),
        Some(pop) => Ok(1.0 - n as f64 / pop as f64),
    }
}

/// The design variance approximation shared by direct and stage-one
/// estimates: `(1/n)(1 - n/N)(1/(n-1)) * sum w^2 r^2` over the residuals `r`.
pub fn weighted_residual_variance(
    w_area: &[f64],
    residuals: impl IntoIterator<Item = f64>,
    population: Option<u64>,
) -> Result<f64> {
    let n = w_area.len();
    if n < 2 {
        return Err(Error::invalid("variance undefined for singleton sample"));
    }
    let factor = fpc(n, population)? / (n as f64 * (n as f64 - 1.0));
    let ss: f64 = w_area.iter().zip(residuals).map(|(&w, r)| w * w * r * r).sum();
    Ok(factor * ss)
}

/// Sampling variance of the Hajek estimate.
pub fn hajek_variance(y: &[u8], w_area: &[f64], mu: f64, population: Option<u64>) -> Result<f64> {
    weighted_residual_variance(w_area, y.iter().map(|&y| f64::from(y) - mu), population)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Empirical logistic transform of a proportion and its variance:
/// `(logit(mu), psi / [mu(1-mu)]^2)`.
pub fn empirical_logit(mu: f64, psi: f64) -> Result<(f64, f64)> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Unstable);
    }
    if psi < 0.0 || psi.is_nan() {
        return Err(Error::invalid(format!("negative sampling variance {psi}")));
    }
    let q = mu * (1.0 - mu);
    Ok((logit(mu), psi / (q * q)))
}

/// Moves exact 0/1 estimates inside the unit interval by `delta`.
pub fn perturb_unstable(mu: f64, delta: f64) -> f64 {
    debug_assert!(delta > 0.0 && delta < 0.5);
    if mu <= 0.0 {
        delta
    } else if mu >= 1.0 {
        1.0 - delta
    } else {
        mu
    }
}

/// Partition of area indices (0-based) into regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regions {
    pub names: Vec<String>,
    pub members: Vec<Vec<usize>>,
}

impl Regions {
    /// Contiguous blocks of area indices, `count` regions over `total` areas.
    pub fn contiguous_blocks(total: usize, count: usize) -> Self {
        let count = count.clamp(1, total.max(1));
        let mut members = vec![Vec::new(); count];
        for i in 0..total {
            members[i * count / total].push(i);
        }
        let names = (1..=count).map(|k| format!("region{k}")).collect();
        Self { names, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Region index per area; errors unless the regions partition `0..total`.
    pub fn assignment(&self, total: usize) -> Result<Vec<usize>> {
        let mut of = vec![usize::MAX; total];
        for (k, members) in self.members.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::invalid(format!("region {} is empty", self.names[k])));
            }
            for &i in members {
                if i >= total || of[i] != usize::MAX {
                    return Err(Error::invalid(format!("area index {i} misassigned in regions")));
                }
                of[i] = k;
            }
        }
        if of.iter().any(|&k| k == usize::MAX) {
            return Err(Error::invalid("regions do not cover every area"));
        }
        Ok(of)
    }
}

/// Population-weighted regional proportion for every region.
pub fn aggregate_to_region(mu: &[f64], population: &[f64], regions: &Regions) -> Result<Vec<f64>> {
    regions
        .members
        .iter()
        .enumerate()
        .map(|(k, members)| {
            if members.is_empty() {
                return Err(Error::invalid(format!("region {} is empty", regions.names[k])));
            }
            let (num, den) = members
                .iter()
                .fold((0.0, 0.0), |(a, b), &i| (a + mu[i] * population[i], b + population[i]));
            Ok(num / den)
        })
        .collect()
}

/// Direct estimate for one sampled area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectArea {
    pub area_id: u32,
    pub n: usize,
    pub mu: f64,
    /// `None` for singleton areas.
    pub psi: Option<f64>,
    pub stable: bool,
    pub theta: Option<f64>,
    pub gamma: Option<f64>,
}

/// Direct estimates for every sampled area, ordered by area id.
#[derive(Debug, Clone)]
pub struct DirectEstimates {
    pub areas: Vec<DirectArea>,
}

impl DirectEstimates {
    pub fn compute(sample: &SurveySample, weights: &WeightSet) -> Result<Self> {
        let records = sample.records();
        let mut areas = Vec::with_capacity(sample.sampled_count());
        for id in sample.sampled_areas() {
            let idx = sample.area_records(id);
            let y: Vec<u8> = idx.iter().map(|&j| records[j].y).collect();
            let w: Vec<f64> = idx.iter().map(|&j| weights.w_area[j]).collect();
            let mu = hajek_estimate(&y, &w)?;
            let psi = if idx.len() >= 2 {
                Some(hajek_variance(&y, &w, mu, sample.area(id).population)?)
            } else {
                None
            };
            // Exact comparison: binary outcomes with positive weights only
            // collapse to 0/1 when every outcome agrees.
            let stable = mu > 0.0 && mu < 1.0 && psi.is_some();
            let (theta, gamma) = match (stable, psi) {
                (true, Some(psi)) => {
                    let (t, g) = empirical_logit(mu, psi)?;
                    (Some(t), Some(g))
                }
                _ => (None, None),
            };
            areas.push(DirectArea { area_id: id, n: idx.len(), mu, psi, stable, theta, gamma });
        }
        Ok(Self { areas })
    }

    pub fn get(&self, area_id: u32) -> Option<&DirectArea> {
        self.areas
            .binary_search_by_key(&area_id, |a| a.area_id)
            .ok()
            .map(|k| &self.areas[k])
    }

    pub fn unstable_fraction(&self) -> f64 {
        if self.areas.is_empty() {
            return 0.0;
        }
        self.areas.iter().filter(|a| !a.stable).count() as f64 / self.areas.len() as f64
    }
}

/// Overall weighted prevalence using sample-scaled weights.
pub fn overall_prevalence(sample: &SurveySample, weights: &WeightSet) -> f64 {
    let n = sample.len() as f64;
    sample
        .records()
        .iter()
        .zip(&weights.w_sample)
        .map(|(r, w)| w * f64::from(r.y))
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn area_norm(w_raw: &[f64]) -> Vec<f64> {
        let s: f64 = w_raw.iter().sum();
        w_raw.iter().map(|w| w * w_raw.len() as f64 / s).collect()
    }

    #[test]
    fn hajek_examples() {
        assert_eq!(hajek_estimate(&[1, 0, 1, 0], &[1.0; 4]).unwrap(), 0.5);
        assert_eq!(hajek_estimate(&[1, 1, 1], &area_norm(&[0.3, 2.0, 7.0])).unwrap(), 1.0);
        let w = area_norm(&[2.0, 1.0, 1.0]);
        assert_eq!(w, vec![1.5, 0.75, 0.75]);
        assert_close!(hajek_estimate(&[1, 0, 0], &w).unwrap(), 0.5, 1e-15);
        assert!(hajek_estimate(&[], &[]).is_err());
    }

    #[test]
    fn hajek_variance_examples() {
        assert_eq!(hajek_variance(&[1, 1, 1], &area_norm(&[1.0, 4.0, 2.0]), 1.0, Some(50)).unwrap(), 0.0);
        assert!(hajek_variance(&[1], &[1.0], 1.0, Some(10)).is_err());
        assert_close!(hajek_variance(&[1, 0], &[1.0, 1.0], 0.5, Some(100)).unwrap(), 0.245, 1e-15);
        assert!(hajek_variance(&[1, 0, 1], &[1.0; 3], 2.0 / 3.0, Some(2)).is_err());
        // census of an area: the correction zeroes the variance
        assert_eq!(hajek_variance(&[1, 0], &[1.0, 1.0], 0.5, Some(2)).unwrap(), 0.0);
        // unknown population: no correction
        assert_close!(hajek_variance(&[1, 0], &[1.0, 1.0], 0.5, None).unwrap(), 0.25, 1e-15);
    }

    #[test]
    fn empirical_logit_examples() {
        let (t, g) = empirical_logit(0.5, 0.01).unwrap();
        assert_eq!(t, 0.0);
        assert_close!(g, 0.16, 1e-15);
        assert!(matches!(empirical_logit(0.0, 0.1), Err(Error::Unstable)));
        assert!(matches!(empirical_logit(1.0, 0.1), Err(Error::Unstable)));
        let (t1, g1) = empirical_logit(0.2, 0.03).unwrap();
        let (t2, g2) = empirical_logit(0.8, 0.03).unwrap();
        assert_close!(t1, -t2, 1e-15);
        assert_close!(g1, g2, 1e-12);
    }

    #[test]
    fn perturbation() {
        assert_eq!(perturb_unstable(0.0, DEFAULT_PERTURBATION), 0.001);
        assert_eq!(perturb_unstable(0.3, DEFAULT_PERTURBATION), 0.3);
        assert_eq!(perturb_unstable(1.0, DEFAULT_PERTURBATION), 0.999);
    }

    #[test]
    fn regional_aggregation() {
        let one = Regions { names: vec!["a".into()], members: vec![vec![0, 1]] };
        assert_close!(aggregate_to_region(&[0.2, 0.4], &[10.0, 10.0], &one).unwrap()[0], 0.3, 1e-15);
        assert_close!(aggregate_to_region(&[0.1, 0.3], &[100.0, 300.0], &one).unwrap()[0], 0.25, 1e-15);
        let split = Regions { names: vec!["a".into(), "b".into()], members: vec![vec![0], vec![1]] };
        assert_eq!(aggregate_to_region(&[0.1, 0.3], &[100.0, 300.0], &split).unwrap(), vec![0.1, 0.3]);
        let empty = Regions { names: vec!["a".into()], members: vec![vec![]] };
        assert!(aggregate_to_region(&[0.1], &[1.0], &empty).is_err());
    }

    #[test]
    fn contiguous_regions_partition() {
        let r = Regions::contiguous_blocks(10, 3);
        assert_eq!(r.assignment(10).unwrap().len(), 10);
        assert_eq!(r.members.iter().map(Vec::len).sum::<usize>(), 10);
    }

    #[test]
    fn weight_scalings_sum() {
        let records = vec![
            Record { area_id: 1, y: 1, x_survey: 1, x_census: 0.0, w_raw: 3.0 },
            Record { area_id: 1, y: 0, x_survey: 2, x_census: 0.1, w_raw: 1.0 },
            Record { area_id: 3, y: 0, x_survey: 3, x_census: 0.2, w_raw: 10.0 },
        ];
        let areas = (1..=3).map(|id| AreaMeta { area_id: id, population: Some(100), z: 0.0 }).collect();
        let s = SurveySample::new(records, areas).unwrap();
        let w = WeightSet::from_sample(&s);
        assert_close!(w.w_area[0] + w.w_area[1], 2.0, 1e-12);
        assert_close!(w.w_area[2], 1.0, 1e-12);
        assert_close!(w.w_sample.iter().sum::<f64>(), 3.0, 1e-12);
        assert_eq!(s.sampled_areas(), vec![1, 3]);
        let d = DirectEstimates::compute(&s, &w).unwrap();
        assert_close!(d.areas[0].mu, 0.75, 1e-12);
        assert!(d.areas[0].stable);
        assert!(!d.areas[1].stable);
        assert!(d.areas[1].psi.is_none());
    }

    #[test]
    fn sample_validation() {
        let areas = |m: u32| (1..=m).map(|id| AreaMeta { area_id: id, population: Some(5), z: 0.0 }).collect::<Vec<_>>();
        let bad_w = vec![Record { area_id: 1, y: 1, x_survey: 1, x_census: 0.0, w_raw: 0.0 }];
        assert!(SurveySample::new(bad_w, areas(2)).is_err());
        let bad_id = vec![Record { area_id: 3, y: 1, x_survey: 1, x_census: 0.0, w_raw: 1.0 }];
        assert!(SurveySample::new(bad_id, areas(2)).is_err());
    }

    proptest! {
        #[test]
        fn hajek_in_unit_interval(ys in prop::collection::vec(0u8..2, 1..30), ws in prop::collection::vec(0.01f64..100.0, 30)) {
            let w = area_norm(&ws[..ys.len()]);
            let mu = hajek_estimate(&ys, &w).unwrap();
            prop_assert!((0.0..=1.0).contains(&mu));
        }

        #[test]
        fn hajek_equal_weights_is_mean(ys in prop::collection::vec(0u8..2, 1..30), c in 0.1f64..50.0) {
            let w = area_norm(&vec![c; ys.len()]);
            let mean = ys.iter().map(|&y| f64::from(y)).sum::<f64>() / ys.len() as f64;
            prop_assert!((hajek_estimate(&ys, &w).unwrap() - mean).abs() < 1e-12);
        }

        #[test]
        fn hajek_variance_scale_invariant(ys in prop::collection::vec(0u8..2, 2..30), ws in prop::collection::vec(0.01f64..100.0, 30), c in 0.01f64..100.0) {
            let raw = &ws[..ys.len()];
            let scaled: Vec<f64> = raw.iter().map(|w| w * c).collect();
            let (w1, w2) = (area_norm(raw), area_norm(&scaled));
            let (m1, m2) = (hajek_estimate(&ys, &w1).unwrap(), hajek_estimate(&ys, &w2).unwrap());
            let v1 = hajek_variance(&ys, &w1, m1, Some(1000)).unwrap();
            let v2 = hajek_variance(&ys, &w2, m2, Some(1000)).unwrap();
            prop_assert!((v1 - v2).abs() <= 1e-12 * v1.max(1e-12));
        }

        #[test]
        fn logit_round_trip(mu in 1e-6f64..(1.0 - 1e-6), psi in 0.0f64..1.0) {
            let (theta, _) = empirical_logit(mu, psi).unwrap();
            prop_assert!((inv_logit(theta) - mu).abs() < 1e-12);
        }
    }
}
