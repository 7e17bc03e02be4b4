use super::diagnostics::{ess, split_rhat};
use super::RHAT_THRESHOLD;
use crate::error::Result;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub step_size: f64,
    pub accept_rate: f64,
    pub divergences: usize,
    pub mean_steps: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    pub chains: Vec<ChainStats>,
    /// Fraction of post-warmup iterations that diverged, over all chains.
    pub divergent_fraction: f64,
    /// Problems detected while sampling; empty for a clean run.
    pub flags: Vec<String>,
}

impl SamplerDiagnostics {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Post-warmup draws laid out as chain x draw x parameter, on the constrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    names: Vec<String>,
    chains: usize,
    draws: usize,
    values: Vec<f64>,
    pub diagnostics: SamplerDiagnostics,
}

impl PosteriorMatrix {
    pub fn new(names: Vec<String>, chains: usize, draws: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), chains * draws * names.len());
        Self { names, chains, draws, values, diagnostics: SamplerDiagnostics::default() }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    pub fn draws_per_chain(&self) -> usize {
        self.draws
    }

    pub fn total_draws(&self) -> usize {
        self.chains * self.draws
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn draw(&self, chain: usize, t: usize) -> &[f64] {
        let d = self.dim();
        let start = (chain * self.draws + t) * d;
        &self.values[start..start + d]
    }

    /// All draws in chain-major order.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim().max(1))
    }

    /// One parameter's draws, split by chain.
    pub fn by_chain(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| (0..self.draws).map(|t| self.draw(c, t)[param]).collect())
            .collect()
    }

    /// One parameter's draws pooled over chains.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.iter_draws().map(|d| d[param]).collect()
    }

    /// Split R-hat of one parameter; infinite when the chains are degenerate.
    pub fn rhat(&self, param: usize) -> f64 {
        let chains = self.by_chain(param);
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        split_rhat(&refs).unwrap_or(f64::INFINITY)
    }

    pub fn ess(&self, param: usize) -> f64 {
        let chains = self.by_chain(param);
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        ess(&refs).unwrap_or(0.0)
    }

    /// Largest R-hat among the given parameters.
    pub fn max_rhat(&self, params: impl IntoIterator<Item = usize>) -> f64 {
        params.into_iter().map(|p| self.rhat(p)).fold(1.0, f64::max)
    }

    pub fn converged(&self, params: impl IntoIterator<Item = usize>) -> bool {
        self.max_rhat(params) <= RHAT_THRESHOLD
    }

    /// Writes one row per draw: parameter columns followed by `chain`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = self.names.clone();
        header.push("chain".into());
        wtr.write_record(&header)?;
        for c in 0..self.chains {
            for t in 0..self.draws {
                let mut row: Vec<String> = self.draw(c, t).iter().map(f64::to_string).collect();
                row.push((c + 1).to_string());
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// JSON summary: sampler diagnostics plus per-parameter R-hat and ESS.
    pub fn diagnostics_json(&self) -> serde_json::Value {
        let params: Vec<serde_json::Value> = (0..self.dim())
            .map(|p| {
                let rhat = self.rhat(p);
                serde_json::json!({
                    "name": self.names[p],
                    "rhat": if rhat.is_finite() { serde_json::json!(rhat) } else { serde_json::Value::Null },
                    "ess": self.ess(p),
                })
            })
            .collect();
        serde_json::json!({
            "chains": self.chains,
            "draws_per_chain": self.draws,
            "sampler": self.diagnostics,
            "parameters": params,
        })
    }
}
