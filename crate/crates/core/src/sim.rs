//! Synthetic censuses and informative survey samples for simulation studies.

use crate::error::{Error, Result};
use crate::rng::{self, purpose};
use crate::survey::{logit, AreaMeta, Record, SurveySample};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Floor applied to the selection size measure.
const MIN_SIZE_MEASURE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Main,
    SuppE,
}

/// How area populations are drawn between `n_min` and `n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationScheme {
    /// Uniform over the integers `n_min..=n_max`.
    UniformRange,
    /// Either `n_min` or `n_max` with equal probability.
    TwoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Number of areas (M).
    pub areas: usize,
    pub lower: f64,
    pub upper: f64,
    pub n_min: u64,
    pub n_max: u64,
    #[serde(default = "default_scheme")]
    pub population_scheme: PopulationScheme,
    pub alpha_survey: f64,
    pub alpha_census: f64,
    pub u: f64,
    pub sampling_fraction: f64,
    /// Number of sampled areas (m).
    pub sampled_areas: usize,
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
}

fn default_scheme() -> PopulationScheme {
    PopulationScheme::UniformRange
}

fn default_variant() -> Variant {
    Variant::Main
}

/// Survey-covariate noise for the "high" predictive-power scenarios.
pub const ALPHA_SURVEY_HIGH: f64 = 0.6;
/// Survey-covariate noise for the "average" predictive-power scenarios.
pub const ALPHA_SURVEY_AVERAGE: f64 = 1.2;

impl ScenarioConfig {
    /// Scenario presets `sc1`..`sc6` and `suppe` at the given scale.
    pub fn preset(name: &str, areas: usize, sampled_areas: usize, seed: u64) -> Result<Self> {
        let (lower, upper, alpha_survey, u, variant) = match name.to_ascii_lowercase().as_str() {
            "sc1" => (0.35, 0.65, ALPHA_SURVEY_HIGH, 0.05, Variant::Main),
            "sc2" => (0.35, 0.65, ALPHA_SURVEY_AVERAGE, 0.05, Variant::Main),
            "sc3" => (0.1, 0.4, ALPHA_SURVEY_HIGH, 0.01, Variant::Main),
            "sc4" => (0.1, 0.4, ALPHA_SURVEY_AVERAGE, 0.01, Variant::Main),
            "sc5" => (0.6, 0.9, ALPHA_SURVEY_HIGH, 0.01, Variant::Main),
            "sc6" => (0.6, 0.9, ALPHA_SURVEY_AVERAGE, 0.01, Variant::Main),
            "suppe" | "supp_e" => (0.05, 0.3, ALPHA_SURVEY_HIGH, 0.01, Variant::SuppE),
            other => return Err(Error::config(format!("unknown scenario preset '{other}'"))),
        };
        let cfg = Self {
            name: name.to_ascii_lowercase(),
            areas,
            lower,
            upper,
            n_min: 500,
            n_max: 3000,
            population_scheme: PopulationScheme::UniformRange,
            alpha_survey,
            alpha_census: 1.0,
            u,
            sampling_fraction: 0.004,
            sampled_areas,
            seed,
            variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full-scale preset (100 areas, 60 sampled).
    pub fn full_scale(name: &str, seed: u64) -> Result<Self> {
        Self::preset(name, 100, 60, seed)
    }

    /// Desk-scale preset (40 areas, 24 sampled); keeps the sampled share of areas.
    pub fn desk_scale(name: &str, seed: u64) -> Result<Self> {
        Self::preset(name, 40, 24, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config(msg));
        if self.areas == 0 {
            return fail("areas must be positive".into());
        }
        if !(0.0 < self.lower && self.lower < self.upper && self.upper < 1.0) {
            return fail(format!("need 0 < lower < upper < 1, got {} and {}", self.lower, self.upper));
        }
        if !(self.sampling_fraction > 0.0 && self.sampling_fraction < 1.0) {
            return fail(format!("sampling_fraction {} outside (0, 1)", self.sampling_fraction));
        }
        if self.sampled_areas == 0 || self.sampled_areas > self.areas {
            return fail(format!("sampled_areas {} must lie in 1..={}", self.sampled_areas, self.areas));
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return fail(format!("invalid population range {}..={}", self.n_min, self.n_max));
        }
        for (label, v) in [("alpha_survey", self.alpha_survey), ("alpha_census", self.alpha_census), ("u", self.u)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{label} must be a finite non-negative number"));
            }
        }
        Ok(())
    }

    /// Fixed per-area sample size `round((M/m) f N_i)`.
    pub fn area_sample_size(&self, population: u64) -> u64 {
        let scale = self.areas as f64 / self.sampled_areas as f64;
        (scale * self.sampling_fraction * population as f64).round() as u64
    }
}

/// Census area summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensusArea {
    pub area_id: u32,
    pub population: u64,
    pub true_mu: f64,
    pub z: f64,
}

/// Full synthetic population, stored column-wise and grouped by area.
#[derive(Debug, Clone, PartialEq)]
pub struct CensusFrame {
    pub areas: Vec<CensusArea>,
    pub area_id: Vec<u32>,
    pub y: Vec<u8>,
    pub x_survey: Vec<u8>,
    pub x_census: Vec<f64>,
    offsets: Vec<usize>,
}

impl CensusFrame {
    /// Builds a frame from individual records and the area rows. Records may
    /// arrive in any order; populations and true proportions are recomputed.
    pub fn from_records(areas: &[AreaMeta], records: &[Record]) -> Result<Self> {
        let m = areas.len();
        for (k, a) in areas.iter().enumerate() {
            if a.area_id as usize != k + 1 {
                return Err(Error::invalid("census areas must have ids 1..=M in order"));
            }
        }
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by_key(|&j| records[j].area_id);
        let mut counts = vec![0u64; m];
        let mut ones = vec![0u64; m];
        for r in records {
            let k = (r.area_id as usize)
                .checked_sub(1)
                .filter(|&k| k < m)
                .ok_or_else(|| Error::invalid(format!("census record for unknown area {}", r.area_id)))?;
            counts[k] += 1;
            ones[k] += u64::from(r.y);
        }
        let mut offsets = vec![0];
        for &c in &counts {
            offsets.push(offsets.last().unwrap() + c as usize);
        }
        let mut census_areas = Vec::with_capacity(m);
        for (k, a) in areas.iter().enumerate() {
            if counts[k] == 0 {
                return Err(Error::EmptyArea(a.area_id));
            }
            if a.population.is_some_and(|n| n != counts[k]) {
                return Err(Error::invalid(format!("area {} population does not match the census", a.area_id)));
            }
            census_areas.push(CensusArea {
                area_id: a.area_id,
                population: counts[k],
                true_mu: ones[k] as f64 / counts[k] as f64,
                z: a.z,
            });
        }
        Ok(Self {
            areas: census_areas,
            area_id: order.iter().map(|&j| records[j].area_id).collect(),
            y: order.iter().map(|&j| records[j].y).collect(),
            x_survey: order.iter().map(|&j| records[j].x_survey).collect(),
            x_census: order.iter().map(|&j| records[j].x_census).collect(),
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Index range of the individuals in area `k` (0-based).
    pub fn area_range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn true_mu(&self) -> Vec<f64> {
        self.areas.iter().map(|a| a.true_mu).collect()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.areas.iter().map(|a| a.population as f64).collect()
    }

    pub fn area_meta(&self) -> Vec<AreaMeta> {
        self.areas
            .iter()
            .map(|a| AreaMeta { area_id: a.area_id, population: Some(a.population), z: a.z })
            .collect()
    }

    /// Census records for one area, with unit weights.
    pub fn area_records(&self, k: usize) -> impl Iterator<Item = Record> + '_ {
        self.area_range(k).map(move |j| Record {
            area_id: self.area_id[j],
            y: self.y[j],
            x_survey: self.x_survey[j],
            x_census: self.x_census[j],
            w_raw: 1.0,
        })
    }
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    for x in v.iter_mut() {
        *x = (*x - mean) / sd;
    }
}

/// Empirical quantile by linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn generate_census(config: &ScenarioConfig) -> Result<CensusFrame> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, &[purpose::CENSUS]);
    let m = config.areas;
    let bounds: Vec<f64> = (0..m)
        .map(|i| {
            if m == 1 {
                config.lower
            } else {
                config.lower + (config.upper - config.lower) * i as f64 / (m - 1) as f64
            }
        })
        .collect();
    let populations: Vec<u64> = (0..m)
        .map(|_| match config.population_scheme {
            PopulationScheme::UniformRange => rng.random_range(config.n_min..=config.n_max),
            PopulationScheme::TwoPoint => {
                if rng.random::<bool>() {
                    config.n_max
                } else {
                    config.n_min
                }
            }
        })
        .collect();

    let total: usize = populations.iter().map(|&n| n as usize).sum();
    let mut area_id = Vec::with_capacity(total);
    let mut y = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(m + 1);
    offsets.push(0);
    let mut true_mu = Vec::with_capacity(m);
    for (i, (&n, &p)) in populations.iter().zip(&bounds).enumerate() {
        let ones = Binomial::new(n, p).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng);
        area_id.extend(std::iter::repeat_n(i as u32 + 1, n as usize));
        y.extend(std::iter::repeat_n(1u8, ones as usize));
        y.extend(std::iter::repeat_n(0u8, (n - ones) as usize));
        offsets.push(y.len());
        true_mu.push(ones as f64 / n as f64);
    }

    let mut xs_survey: Vec<f64> = y
        .iter()
        .map(|&v| f64::from(v) + config.alpha_survey * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut x_census: Vec<f64> = y
        .iter()
        .map(|&v| f64::from(v) + config.alpha_census * rng.sample::<f64, _>(StandardNormal))
        .collect();
    standardize(&mut x_census);
    let mut sorted = xs_survey.clone();
    sorted.sort_by(f64::total_cmp);
    let (c1, c2) = (quantile(&sorted, 1.0 / 3.0), quantile(&sorted, 2.0 / 3.0));
    let x_survey: Vec<u8> = xs_survey
        .drain(..)
        .map(|x| if x <= c1 { 1 } else if x <= c2 { 2 } else { 3 })
        .collect();

    // Areas with a true proportion of exactly 0 or 1 get a clamped logit.
    let mut z: Vec<f64> = true_mu
        .iter()
        .map(|&mu| {
            let mu = mu.clamp(1e-6, 1.0 - 1e-6);
            logit(mu) + config.u * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    standardize(&mut z);

    let areas = (0..m)
        .map(|i| CensusArea { area_id: i as u32 + 1, population: populations[i], true_mu: true_mu[i], z: z[i] })
        .collect();
    Ok(CensusFrame { areas, area_id, y, x_survey, x_census, offsets })
}

/// The supplementary-experiment census: same generator with bounds 0.05 and 0.3.
pub fn generate_suppe_census(config: &ScenarioConfig) -> Result<CensusFrame> {
    let cfg = ScenarioConfig { lower: 0.05, upper: 0.3, variant: Variant::SuppE, ..config.clone() };
    generate_census(&cfg)
}

/// Census for the config's variant.
pub fn census_for(config: &ScenarioConfig) -> Result<CensusFrame> {
    match config.variant {
        Variant::Main => generate_census(config),
        Variant::SuppE => generate_suppe_census(config),
    }
}

/// Size-proportional selection of `m` indices without replacement by
/// successive draws, renormalising over the remaining units.
pub fn pps_without_replacement<R: Rng>(sizes: &[f64], m: usize, rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..sizes.len()).collect();
    let mut chosen = Vec::with_capacity(m);
    for _ in 0..m.min(sizes.len()) {
        let total: f64 = remaining.iter().map(|&k| sizes[k]).sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (pos, &k) in remaining.iter().enumerate() {
            target -= sizes[k];
            if target < 0.0 {
                pick = pos;
                break;
            }
        }
        chosen.push(remaining.remove(pick));
    }
    chosen.sort_unstable();
    chosen
}

/// Inclusion probabilities `n * p_j` capped at one, with the excess
/// redistributed over the non-certainty units.
pub fn inclusion_probabilities(probs: &[f64], n: usize) -> Vec<f64> {
    let mut pi = vec![0.0; probs.len()];
    let mut certain = vec![false; probs.len()];
    loop {
        let left = n - certain.iter().filter(|&&c| c).count();
        let mass: f64 = probs.iter().zip(&certain).filter(|(_, &c)| !c).map(|(p, _)| p).sum();
        let mut changed = false;
        for j in 0..probs.len() {
            if certain[j] {
                pi[j] = 1.0;
                continue;
            }
            pi[j] = left as f64 * probs[j] / mass;
            if pi[j] >= 1.0 {
                certain[j] = true;
                changed = true;
            }
        }
        if !changed {
            return pi;
        }
    }
}

/// Systematic PPS selection of `n` units on a randomly permuted list.
pub fn systematic_pps<R: Rng>(probs: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    if n >= probs.len() {
        return (0..probs.len()).collect();
    }
    let pi = inclusion_probabilities(probs, n);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.shuffle(rng);
    let start: f64 = rng.random();
    let mut chosen = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut next = start;
    for &j in &order {
        cum += pi[j];
        while cum > next && chosen.len() < n {
            if chosen.last() != Some(&j) {
                chosen.push(j);
            }
            next += 1.0;
        }
    }
    // Rounding in the cumulative sum can leave the final point unreached.
    if chosen.len() < n {
        for &j in order.iter().rev() {
            if chosen.len() == n {
                break;
            }
            if !chosen.contains(&j) {
                chosen.push(j);
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Draws one informative sample from the census. Only the sample varies
/// with `replicate`; the census itself is fixed by the config seed.
pub fn draw_informative_sample(census: &CensusFrame, config: &ScenarioConfig, replicate: u64) -> Result<SurveySample> {
    let mut rng = rng::stream(config.seed, &[purpose::SAMPLE, replicate]);
    let sizes = census.populations();
    let selected = pps_without_replacement(&sizes, config.sampled_areas, &mut rng);
    let mut records = Vec::new();
    for k in selected {
        let area = &census.areas[k];
        let n_i = config.area_sample_size(area.population);
        if n_i < 1 {
            log::warn!("area {} dropped: fixed sample size rounds to zero", area.area_id);
            continue;
        }
        if n_i > area.population {
            return Err(Error::invalid(format!(
                "area {} sample size {n_i} exceeds population {}",
                area.area_id, area.population
            )));
        }
        let range = census.area_range(k);
        let z: Vec<f64> = census.y[range.clone()]
            .iter()
            .map(|&y| {
                let h: f64 = rng.sample(Exp1);
                (f64::from(u8::from(y == 0)) + 0.8 * h).max(MIN_SIZE_MEASURE)
            })
            .collect();
        let total: f64 = z.iter().sum();
        let pi: Vec<f64> = z.iter().map(|v| v / total).collect();
        let chosen = systematic_pps(&pi, n_i as usize, &mut rng);
        let base: Vec<f64> = chosen.iter().map(|&j| 1.0 / (n_i as f64 * pi[j])).collect();
        let scale = area.population as f64 / base.iter().sum::<f64>();
        for (&j, w) in chosen.iter().zip(base) {
            let g = range.start + j;
            records.push(Record {
                area_id: area.area_id,
                y: census.y[g],
                x_survey: census.x_survey[g],
                x_census: census.x_census[g],
                w_raw: w * scale,
            });
        }
    }
    SurveySample::new(records, census.area_meta())
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a ScenarioConfig,
    true_mu: Vec<f64>,
    populations: Vec<u64>,
}

/// Writes the census individuals (`area_id,y,x_survey,x_census,w_raw`) plus
/// area rows and a JSON sidecar holding the config and true proportions.
pub fn write_census(dir: impl AsRef<Path>, census: &CensusFrame, config: &ScenarioConfig) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let records: Vec<Record> = (0..census.areas.len()).flat_map(|k| census.area_records(k)).collect();
    crate::survey::write_records(std::fs::File::create(dir.join("census.csv"))?, &records)?;
    crate::survey::write_areas(dir.join("areas.csv"), &census.area_meta())?;
    let sidecar = Sidecar {
        config,
        true_mu: census.true_mu(),
        populations: census.areas.iter().map(|a| a.population).collect(),
    };
    let mut f = std::fs::File::create(dir.join("census.json"))?;
    serde_json::to_writer_pretty(&mut f, &sidecar)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Reads a census written by [`write_census`].
pub fn read_census(dir: impl AsRef<Path>) -> Result<CensusFrame> {
    let dir = dir.as_ref();
    let areas = crate::survey::read_areas(dir.join("areas.csv"))?;
    let records = crate::survey::read_records(std::fs::File::open(dir.join("census.csv"))?)?;
    CensusFrame::from_records(&areas, &records)
}
