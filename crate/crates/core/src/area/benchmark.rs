//! Benchmarking area estimates to reliable regional direct estimates.

use crate::error::{Error, Result};
use crate::survey::{hajek_estimate, hajek_variance, Regions, SurveySample};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Read;

/// Largest benchmarked value kept after ratio adjustment.
pub const BENCHMARK_CLAMP: f64 = 1.0 - 1e-9;

/// Regional targets for inexact (penalised) benchmarking.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub regions: Regions,
    pub c_hat: Vec<f64>,
    pub var: Vec<f64>,
    /// Discrepancy multiplier on the direct standard errors.
    pub epsilon: f64,
}

impl BenchmarkSpec {
    pub fn validate(&self, areas: usize) -> Result<()> {
        self.regions.assignment_partial(areas)?;
        if self.c_hat.len() != self.regions.len() || self.var.len() != self.regions.len() {
            return Err(Error::config("benchmark targets do not match the regions"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("benchmark epsilon must be positive"));
        }
        for (&c, &v) in self.c_hat.iter().zip(&self.var) {
            if !(c > 0.0 && c < 1.0) || !(v > 0.0) {
                return Err(Error::config(format!("invalid benchmark target {c} with variance {v}")));
            }
        }
        Ok(())
    }
}

impl Regions {
    /// Like [`Regions::assignment`] but allows areas outside every region.
    pub fn assignment_partial(&self, total: usize) -> Result<Vec<Option<usize>>> {
        let mut of = vec![None; total];
        for (k, members) in self.members.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::invalid(format!("region {} is empty", self.names[k])));
            }
            for &i in members {
                if i >= total || of[i].is_some() {
                    return Err(Error::invalid(format!("area index {i} misassigned in regions")));
                }
                of[i] = Some(k);
            }
        }
        Ok(of)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct RegionEntry {
    areas: Vec<u32>,
    #[serde(rename = "C_hat")]
    c_hat: f64,
    var: f64,
}

/// Reads `{region: {areas: [ids], C_hat, var}}`; area ids are 1-based.
pub fn read_benchmark_json<R: Read>(reader: R, areas: usize, epsilon: f64) -> Result<BenchmarkSpec> {
    let map: BTreeMap<String, RegionEntry> = serde_json::from_reader(reader)?;
    let mut regions = Regions { names: Vec::new(), members: Vec::new() };
    let (mut c_hat, mut var) = (Vec::new(), Vec::new());
    for (name, e) in map {
        let members = e
            .areas
            .iter()
            .map(|&id| {
                if id == 0 || id as usize > areas {
                    Err(Error::config(format!("region {name} lists unknown area {id}")))
                } else {
                    Ok(id as usize - 1)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        regions.names.push(name);
        regions.members.push(members);
        c_hat.push(e.c_hat);
        var.push(e.var);
    }
    let spec = BenchmarkSpec { regions, c_hat, var, epsilon };
    spec.validate(areas)?;
    Ok(spec)
}

/// Direct Hajek estimate and variance for each region, pooling its sampled
/// records. Regions without at least two records are dropped.
pub fn regional_direct(sample: &SurveySample, regions: &Regions) -> Result<(Regions, Vec<f64>, Vec<f64>)> {
    let records = sample.records();
    let mut kept = Regions { names: Vec::new(), members: Vec::new() };
    let (mut c, mut v) = (Vec::new(), Vec::new());
    for (k, members) in regions.members.iter().enumerate() {
        let idx: Vec<usize> = members
            .iter()
            .flat_map(|&i| sample.area_records(i as u32 + 1).iter().copied())
            .collect();
        if idx.len() < 2 {
            continue;
        }
        let total: f64 = idx.iter().map(|&j| records[j].w_raw).sum();
        let n = idx.len() as f64;
        let w: Vec<f64> = idx.iter().map(|&j| records[j].w_raw * n / total).collect();
        let y: Vec<u8> = idx.iter().map(|&j| records[j].y).collect();
        let mu = hajek_estimate(&y, &w)?;
        let population: Option<u64> = members
            .iter()
            .map(|&i| sample.area(i as u32 + 1).population)
            .sum::<Option<u64>>();
        let var = hajek_variance(&y, &w, mu, population)?;
        if !(mu > 0.0 && mu < 1.0 && var > 0.0) {
            continue;
        }
        kept.names.push(regions.names[k].clone());
        kept.members.push(members.clone());
        c.push(mu);
        v.push(var);
    }
    Ok((kept, c, v))
}

/// Ratio-adjusts each draw so that population-weighted regional aggregates
/// equal `c_hat` exactly. `draws` is draw x area; returns how many values
/// exceeded one and were clamped.
pub fn exact_benchmark(draws: &mut [Vec<f64>], population: &[f64], regions: &Regions, c_hat: &[f64]) -> Result<usize> {
    if c_hat.len() != regions.len() {
        return Err(Error::invalid("one benchmark value per region is required"));
    }
    if c_hat.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
        return Err(Error::invalid("benchmark values must lie in (0, 1)"));
    }
    let mut clamped = 0;
    for draw in draws.iter_mut() {
        for (members, &c) in regions.members.iter().zip(c_hat) {
            let n_k: f64 = members.iter().map(|&i| population[i]).sum();
            let modeled: f64 = members.iter().map(|&i| draw[i] * population[i]).sum();
            let ratio = modeled / (c * n_k);
            for &i in members {
                let v = draw[i] / ratio;
                if v > BENCHMARK_CLAMP {
                    clamped += 1;
                    draw[i] = BENCHMARK_CLAMP;
                } else {
                    draw[i] = v;
                }
            }
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} benchmarked values exceeded one and were clamped");
    }
    Ok(clamped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey::aggregate_to_region;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        let regions = Regions { names: vec!["a".into()], members: vec![vec![0, 1]] };
        let mut draws = vec![vec![0.2, 0.4]];
        exact_benchmark(&mut draws, &[100.0, 100.0], &regions, &[0.25]).unwrap();
        assert_close!(draws[0][0], 1.0 / 6.0, 1e-15);
        assert_close!(draws[0][1], 1.0 / 3.0, 1e-15);
    }

    #[test]
    fn already_benchmarked_is_unchanged() {
        let regions = Regions { names: vec!["a".into()], members: vec![vec![0, 1]] };
        let mut draws = vec![vec![0.2, 0.3]];
        exact_benchmark(&mut draws, &[100.0, 100.0], &regions, &[0.25]).unwrap();
        assert_close!(draws[0][0], 0.2, 1e-15);
        assert_close!(draws[0][1], 0.3, 1e-15);
    }

    #[test]
    fn clamp_counts() {
        let regions = Regions { names: vec!["a".into()], members: vec![vec![0, 1]] };
        let mut draws = vec![vec![0.9, 0.01]];
        let n = exact_benchmark(&mut draws, &[100.0, 1000.0], &regions, &[0.5]).unwrap();
        assert_eq!(n, 1);
        assert_eq!(draws[0][0], BENCHMARK_CLAMP);
    }

    #[test]
    fn json_reader() {
        let json = r#"{"north": {"areas": [1, 2], "C_hat": 0.3, "var": 0.001}, "south": {"areas": [3], "C_hat": 0.2, "var": 0.002}}"#;
        let b = read_benchmark_json(json.as_bytes(), 3, 0.3).unwrap();
        assert_eq!(b.regions.members, vec![vec![0, 1], vec![2]]);
        assert_eq!(b.c_hat, vec![0.3, 0.2]);
        let bad = r#"{"north": {"areas": [4], "C_hat": 0.3, "var": 0.001}}"#;
        assert!(read_benchmark_json(bad.as_bytes(), 3, 0.3).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_identity(mu in prop::collection::vec(0.1f64..0.3, 6), pop in prop::collection::vec(100.0f64..3000.0, 6), c in 0.05f64..0.3) {
            let regions = Regions { names: vec!["a".into(), "b".into()], members: vec![vec![0, 2, 4], vec![1, 3, 5]] };
            let mut draws = vec![mu.clone()];
            exact_benchmark(&mut draws, &pop, &regions, &[c, c * 0.9]).unwrap();
            let agg = aggregate_to_region(&draws[0], &pop, &regions).unwrap();
            prop_assert!((agg[0] - c).abs() <= 1e-12);
            prop_assert!((agg[1] - c * 0.9).abs() <= 1e-12);
        }
    }
}
