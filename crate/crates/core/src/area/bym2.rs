//! Neighbourhood graphs and the scaled ICAR + unstructured (BYM2) effect.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::Read;

/// Soft sum-to-zero constraint sd per area in a component.
const SUM_TO_ZERO_SD: f64 = 0.001;

/// Prior on the mixing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoPrior {
    Beta { a: f64, b: f64 },
    Uniform,
    /// Held at a known value (not sampled).
    Fixed(f64),
}

impl Default for RhoPrior {
    fn default() -> Self {
        RhoPrior::Beta { a: 3.05, b: 1.65 }
    }
}

/// Undirected graph over areas with per-component ICAR scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub neighbors: Vec<Vec<usize>>,
    pub component: Vec<usize>,
    pub component_sizes: Vec<usize>,
    /// Scaling factor per component; `NaN` for singleton islands.
    pub kappa: Vec<f64>,
}

impl Graph {
    /// Builds a graph from 0-based edges; duplicate edges are merged.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("graph has no nodes"));
        }
        let mut neighbors = vec![Vec::new(); n];
        let mut clean = Vec::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("edge ({a}, {b}) references a node outside 0..{n}")));
            }
            if a == b {
                return Err(Error::invalid(format!("self-loop at node {a}")));
            }
            let (a, b) = (a.min(b), a.max(b));
            if !neighbors[a].contains(&b) {
                neighbors[a].push(b);
                neighbors[b].push(a);
                clean.push((a, b));
            }
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        let mut component = vec![usize::MAX; n];
        let mut component_sizes = Vec::new();
        for start in 0..n {
            if component[start] != usize::MAX {
                continue;
            }
            let c = component_sizes.len();
            let mut stack = vec![start];
            component[start] = c;
            let mut size = 0;
            while let Some(v) = stack.pop() {
                size += 1;
                for &w in &neighbors[v] {
                    if component[w] == usize::MAX {
                        component[w] = c;
                        stack.push(w);
                    }
                }
            }
            component_sizes.push(size);
        }
        let mut graph = Self { n, edges: clean, neighbors, component, component_sizes, kappa: Vec::new() };
        graph.kappa = (0..graph.component_sizes.len()).map(|c| graph.component_kappa(c)).collect();
        Ok(graph)
    }

    pub fn is_island(&self, i: usize) -> bool {
        self.neighbors[i].is_empty()
    }

    fn component_kappa(&self, c: usize) -> f64 {
        let nodes: Vec<usize> = (0..self.n).filter(|&i| self.component[i] == c).collect();
        if nodes.len() < 2 {
            return f64::NAN;
        }
        let mut local = vec![usize::MAX; self.n];
        for (k, &i) in nodes.iter().enumerate() {
            local[i] = k;
        }
        let lap = laplacian(nodes.len(), self.edges.iter().filter(|(a, _)| self.component[*a] == c).map(|&(a, b)| (local[a], local[b])));
        icar_scaling_connected(&lap)
    }

    /// Scaling factor for area `i` (`NaN` for islands).
    pub fn kappa_of(&self, i: usize) -> f64 {
        self.kappa[self.component[i]]
    }
}

fn laplacian(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for (a, b) in edges {
        l[(a, b)] -= 1.0;
        l[(b, a)] -= 1.0;
        l[(a, a)] += 1.0;
        l[(b, b)] += 1.0;
    }
    l
}

/// Geometric mean of the diagonal of the Laplacian's generalized inverse for
/// a connected graph, via `(L + J/n)^-1 - J/n`.
fn icar_scaling_connected(lap: &DMatrix<f64>) -> f64 {
    let n = lap.nrows();
    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    let inv = (lap + &j).try_inverse().expect("connected Laplacian plus J/n is invertible");
    let pinv = inv - j;
    let mean_log = (0..n).map(|i| pinv[(i, i)].ln()).sum::<f64>() / n as f64;
    mean_log.exp()
}

/// Scaling factor of a connected adjacency structure; errors for graphs
/// that are empty or disconnected (use [`Graph`] for per-component values).
pub fn compute_icar_scaling(n: usize, edges: &[(usize, usize)]) -> Result<f64> {
    let g = Graph::new(n, edges)?;
    if g.edges.is_empty() {
        return Err(Error::invalid("graph has no edges"));
    }
    if g.component_sizes.len() != 1 {
        return Err(Error::invalid("graph is disconnected; scaling is defined per component"));
    }
    Ok(g.kappa[0])
}

/// BYM2 combination for every area plus the log prior of the `s` and `u`
/// vectors. Islands carry only the unstructured part at full scale and get
/// a standard-normal prior on their (unused) `s`.
pub fn bym2_contribution(s: &[f64], u: &[f64], rho: f64, sigma: f64, graph: &Graph) -> (Vec<f64>, f64) {
    let n = graph.n;
    let mut delta = vec![0.0; n];
    for i in 0..n {
        delta[i] = if graph.is_island(i) {
            sigma * u[i]
        } else {
            sigma * (s[i] * (rho / graph.kappa_of(i)).sqrt() + u[i] * (1.0 - rho).sqrt())
        };
    }
    (delta, icar_log_prior(s, graph, None) + u.iter().map(|v| -0.5 * v * v).sum::<f64>())
}

/// ICAR pairwise-difference prior with the soft sum-to-zero constraint per
/// component; islands get `N(0, 1)`. Adds the gradient when requested.
pub fn icar_log_prior(s: &[f64], graph: &Graph, mut grad: Option<&mut [f64]>) -> f64 {
    let mut lp = 0.0;
    for &(a, b) in &graph.edges {
        let d = s[a] - s[b];
        lp -= 0.5 * d * d;
        if let Some(g) = grad.as_deref_mut() {
            g[a] -= d;
            g[b] += d;
        }
    }
    let mut sums = vec![0.0; graph.component_sizes.len()];
    for i in 0..graph.n {
        if graph.is_island(i) {
            lp -= 0.5 * s[i] * s[i];
            if let Some(g) = grad.as_deref_mut() {
                g[i] -= s[i];
            }
        } else {
            sums[graph.component[i]] += s[i];
        }
    }
    for (c, &size) in graph.component_sizes.iter().enumerate() {
        if size < 2 {
            continue;
        }
        let sd = SUM_TO_ZERO_SD * size as f64;
        lp -= 0.5 * (sums[c] / sd).powi(2);
        if let Some(g) = grad.as_deref_mut() {
            let d = -sums[c] / (sd * sd);
            for i in 0..graph.n {
                if graph.component[i] == c {
                    g[i] += d;
                }
            }
        }
    }
    lp
}

/// Reads an `area_a,area_b` edge list with 1-based area ids.
pub fn read_adjacency<R: Read>(reader: R, areas: usize) -> Result<Graph> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["area_a", "area_b"] {
        return Err(Error::invalid("adjacency header must be area_a,area_b"));
    }
    let mut edges = Vec::new();
    for row in rdr.deserialize() {
        let (a, b): (usize, usize) = row?;
        if a == 0 || b == 0 || a > areas || b > areas {
            return Err(Error::invalid(format!("adjacency edge ({a}, {b}) outside 1..={areas}")));
        }
        edges.push((a - 1, b - 1));
    }
    Graph::new(areas, &edges)
}

/// Rook-style neighbours on a `rows x cols` lattice, row-major.
pub fn lattice_graph(rows: usize, cols: usize) -> Result<Graph> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    Graph::new(rows * cols, &edges)
}
