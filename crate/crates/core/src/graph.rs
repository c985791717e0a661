//! Directed worker topologies and the Markov chain their aggregation
//! weights define.
//!
//! Edge convention: `out_edges[i]` lists the workers `i` sends its model to.
//! A worker aggregates from its in-neighbours, and the outdegree `d_i` is
//! `out_edges[i].len()`. Row `i` of a [`TransitionMatrix`] holds the
//! weights `p_ij` worker `i` applies to the models it receives from each
//! in-neighbour `j`, so the mixture of initial models held after `t`
//! aggregation rounds is `Ω^t = P^t`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::WeightRule;
use crate::rng::{rng_for, Stream};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 100_000;
pub const ERGODIC_ATTEMPTS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid topology parameters: {0}")]
    InvalidParams(String),
    #[error("no strongly connected topology after {0} attempts")]
    ErgodicityUnreachable(usize),
    #[error("worker {0} has no in-neighbours to aggregate from")]
    EmptyNeighborhood(usize),
    #[error("power iteration did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
}

/// Binomial parameters for dataset sizes `|D_i| ~ B(n_size, p_size)` and
/// outdegrees `d_i ~ B(n_degree, p_degree)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialParams {
    pub n_size: u64,
    pub p_size: f64,
    pub n_degree: u64,
    pub p_degree: f64,
}

impl Default for BinomialParams {
    fn default() -> Self {
        Self {
            n_size: 1000,
            p_size: 0.5,
            n_degree: 8,
            p_degree: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Generation {
    Binomial(BinomialParams),
    /// Every outdegree equals `degree`; sizes still binomial.
    FixedDegree { degree: usize, n_size: u64, p_size: f64 },
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub out_edges: Vec<Vec<usize>>,
    pub dataset_sizes: Vec<u64>,
    pub generation: Generation,
}

impl Topology {
    /// Builds a topology from an edge list, checking the invariants.
    pub fn from_edges(n_workers: usize, edges: &[(usize, usize)], dataset_sizes: Vec<u64>) -> Result<Self, GraphError> {
        let mut out_edges = vec![Vec::new(); n_workers];
        for &(s, d) in edges {
            if s >= n_workers || d >= n_workers {
                return Err(GraphError::InvalidTopology(format!("edge {s}->{d} out of range")));
            }
            out_edges[s].push(d);
        }
        let t = Topology {
            out_edges,
            dataset_sizes,
            generation: Generation::Explicit,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.n_workers();
        if self.dataset_sizes.len() != n {
            return Err(GraphError::InvalidTopology(format!(
                "{} dataset sizes for {n} workers",
                self.dataset_sizes.len()
            )));
        }
        for (i, outs) in self.out_edges.iter().enumerate() {
            if self.dataset_sizes[i] == 0 {
                return Err(GraphError::InvalidTopology(format!("worker {i} has an empty dataset")));
            }
            if outs.is_empty() {
                return Err(GraphError::InvalidTopology(format!("worker {i} has outdegree 0")));
            }
            let mut seen = BTreeSet::new();
            for &j in outs {
                if j == i {
                    return Err(GraphError::InvalidTopology(format!("self-loop at worker {i}")));
                }
                if j >= n {
                    return Err(GraphError::InvalidTopology(format!("edge {i}->{j} out of range")));
                }
                if !seen.insert(j) {
                    return Err(GraphError::InvalidTopology(format!("duplicate edge {i}->{j}")));
                }
            }
        }
        Ok(())
    }

    pub fn n_workers(&self) -> usize {
        self.out_edges.len()
    }

    pub fn outdegree(&self, i: usize) -> usize {
        self.out_edges[i].len()
    }

    /// In-neighbours of every worker, each list in ascending id order.
    pub fn in_neighbors(&self) -> Vec<Vec<usize>> {
        let mut ins = vec![Vec::new(); self.n_workers()];
        for (s, outs) in self.out_edges.iter().enumerate() {
            for &d in outs {
                ins[d].push(s);
            }
        }
        ins
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.out_edges
            .iter()
            .enumerate()
            .flat_map(|(s, outs)| outs.iter().map(move |&d| (s, d)))
            .collect()
    }

    pub fn is_strongly_connected(&self) -> bool {
        let n = self.n_workers();
        if n == 0 {
            return false;
        }
        let reaches_all = |adj: &[Vec<usize>]| {
            let mut seen = vec![false; n];
            let mut stack = vec![0];
            seen[0] = true;
            let mut count = 1;
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        count += 1;
                        stack.push(v);
                    }
                }
            }
            count == n
        };
        reaches_all(&self.out_edges) && reaches_all(&self.in_neighbors())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TopologyDoc::from(self)).expect("topology serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, GraphError> {
        let doc: TopologyDoc =
            serde_json::from_str(s).map_err(|e| GraphError::InvalidTopology(e.to_string()))?;
        let edges: Vec<(usize, usize)> = doc.edges.iter().map(|e| (e[0], e[1])).collect();
        Topology::from_edges(doc.n_workers, &edges, doc.dataset_sizes)
    }
}

/// On-disk topology shape: `{n_workers, edges: [[src, dst], ...], dataset_sizes}`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    pub n_workers: usize,
    pub edges: Vec<[usize; 2]>,
    pub dataset_sizes: Vec<u64>,
}

impl From<&Topology> for TopologyDoc {
    fn from(t: &Topology) -> Self {
        TopologyDoc {
            n_workers: t.n_workers(),
            edges: t.edges().into_iter().map(|(s, d)| [s, d]).collect(),
            dataset_sizes: t.dataset_sizes.clone(),
        }
    }
}

/// Draws from `B(n, p)` until the draw is at least 1.
fn positive_binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    let dist = Binomial::new(n, p).expect("validated binomial parameters");
    loop {
        let x = dist.sample(rng);
        if x >= 1 {
            return x;
        }
    }
}

fn pick_out_neighbors<R: Rng>(rng: &mut R, n: usize, i: usize, degree: usize) -> Vec<usize> {
    // Sample among the n - 1 other workers and shift past i.
    index::sample(rng, n - 1, degree)
        .into_iter()
        .map(|k| if k >= i { k + 1 } else { k })
        .collect()
}

fn check_prob(name: &str, p: f64) -> Result<(), GraphError> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(GraphError::InvalidParams(format!("{name} = {p} outside (0, 1]")))
    }
}

/// Random topology with binomial sizes and outdegrees. Zero draws are
/// resampled. With `require_ergodic`, whole topologies are redrawn until one
/// is strongly connected.
pub fn generate_topology(
    n_workers: usize,
    params: BinomialParams,
    seed: u64,
    require_ergodic: bool,
) -> Result<Topology, GraphError> {
    if n_workers < 2 {
        return Err(GraphError::InvalidParams("need at least 2 workers".into()));
    }
    check_prob("p_size", params.p_size)?;
    check_prob("p_degree", params.p_degree)?;
    if params.n_size == 0 || params.n_degree == 0 {
        return Err(GraphError::InvalidParams("binomial trial counts must be >= 1".into()));
    }
    if params.n_degree as usize >= n_workers {
        return Err(GraphError::InvalidParams(format!(
            "n_degree {} must be below the worker count {n_workers}",
            params.n_degree
        )));
    }
    let mut rng = rng_for(seed, Stream::Topology, &[]);
    for _ in 0..ERGODIC_ATTEMPTS {
        let mut sizes = Vec::with_capacity(n_workers);
        let mut degrees = Vec::with_capacity(n_workers);
        for _ in 0..n_workers {
            sizes.push(positive_binomial(&mut rng, params.n_size, params.p_size));
            degrees.push(positive_binomial(&mut rng, params.n_degree, params.p_degree) as usize);
        }
        let out_edges = (0..n_workers)
            .map(|i| pick_out_neighbors(&mut rng, n_workers, i, degrees[i]))
            .collect();
        let topo = Topology {
            out_edges,
            dataset_sizes: sizes,
            generation: Generation::Binomial(params),
        };
        if !require_ergodic || topo.is_strongly_connected() {
            return Ok(topo);
        }
    }
    Err(GraphError::ErgodicityUnreachable(ERGODIC_ATTEMPTS))
}

/// Random topology in which every worker sends to exactly `degree` others.
pub fn generate_fixed_degree(
    n_workers: usize,
    degree: usize,
    n_size: u64,
    p_size: f64,
    seed: u64,
    require_ergodic: bool,
) -> Result<Topology, GraphError> {
    if n_workers < 2 || degree == 0 || degree >= n_workers {
        return Err(GraphError::InvalidParams(format!(
            "fixed degree {degree} needs 1 <= degree < n_workers ({n_workers})"
        )));
    }
    check_prob("p_size", p_size)?;
    if n_size == 0 {
        return Err(GraphError::InvalidParams("n_size must be >= 1".into()));
    }
    let mut rng = rng_for(seed, Stream::Topology, &[1]);
    for _ in 0..ERGODIC_ATTEMPTS {
        let sizes = (0..n_workers)
            .map(|_| positive_binomial(&mut rng, n_size, p_size))
            .collect();
        let out_edges = (0..n_workers)
            .map(|i| pick_out_neighbors(&mut rng, n_workers, i, degree))
            .collect();
        let topo = Topology {
            out_edges,
            dataset_sizes: sizes,
            generation: Generation::FixedDegree { degree, n_size, p_size },
        };
        if !require_ergodic || topo.is_strongly_connected() {
            return Ok(topo);
        }
    }
    Err(GraphError::ErgodicityUnreachable(ERGODIC_ATTEMPTS))
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul(&self, rhs: &Matrix) -> Matrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let out = &mut data[i * n..(i + 1) * n];
                for (o, b) in out.iter_mut().zip(&rhs.data[k * n..(k + 1) * n]) {
                    *o += a * b;
                }
            }
        }
        Matrix { n, data }
    }

    /// Largest L1 distance between any two rows.
    pub fn row_spread_l1(&self) -> f64 {
        self.row_spread(|a, b| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
    }

    /// Largest L∞ distance between any two rows.
    pub fn row_spread_linf(&self) -> f64 {
        self.row_spread(|a, b| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
    }

    fn row_spread(&self, dist: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max(dist(self.row(i), self.row(j)));
            }
        }
        worst
    }

    /// Number of singular values above `tol` relative to the largest.
    pub fn numerical_rank(&self, tol: f64) -> usize {
        let m = nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.data);
        let sv = m.singular_values();
        let top = sv.iter().copied().fold(0.0, f64::max);
        sv.iter().filter(|&&s| s > tol * top).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|x| format!("{x:.16e}")).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

/// Row-stochastic matrix of aggregation weights for a whole topology.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub entries: Matrix,
    pub weight_rule: WeightRule,
}

impl TransitionMatrix {
    pub fn size(&self) -> usize {
        self.entries.size()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }

    /// `Σ_{i ∈ out(j)} (|D_i| / |D_j|) · p_ij`; equals 1 for every `j` iff
    /// the dataset proportions are stationary.
    pub fn normalization_statistic(&self, topo: &Topology, j: usize) -> f64 {
        let dj = topo.dataset_sizes[j] as f64;
        topo.out_edges[j]
            .iter()
            .map(|&i| topo.dataset_sizes[i] as f64 / dj * self.get(i, j))
            .sum()
    }

    pub fn to_csv(&self) -> String {
        self.entries.to_csv()
    }
}

/// Builds `P` with `P[i][j] = p_ij` for every in-neighbour `j` of `i`.
pub fn build_transition_matrix(topo: &Topology, rule: WeightRule) -> Result<TransitionMatrix, GraphError> {
    let n = topo.n_workers();
    let ins = topo.in_neighbors();
    let mut data = vec![0.0; n * n];
    for (i, senders) in ins.iter().enumerate() {
        if senders.is_empty() {
            return Err(GraphError::EmptyNeighborhood(i));
        }
        let raw: Vec<f64> = senders
            .iter()
            .map(|&j| rule.raw(topo.dataset_sizes[j], topo.outdegree(j)))
            .collect();
        let total: f64 = raw.iter().sum();
        for (&j, w) in senders.iter().zip(raw) {
            data[i * n + j] = w / total;
        }
    }
    Ok(TransitionMatrix {
        entries: Matrix { n, data },
        weight_rule: rule,
    })
}

/// Left-stationary row `π` (`πP = π`, `Σπ = 1`) by power iteration from
/// the uniform vector.
///
/// Iterates the lazy chain `(I + P)/2`, which has the same stationary
/// vector as `P` but also converges when `P` is periodic.
pub fn stationary_distribution(p: &TransitionMatrix, tol: f64, max_iters: usize) -> Result<Vec<f64>, GraphError> {
    let n = p.size();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..max_iters {
        next.iter_mut().zip(&pi).for_each(|(x, &y)| *x = 0.5 * y);
        for (i, &w) in pi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (x, &pij) in next.iter_mut().zip(p.entries.row(i)) {
                *x += 0.5 * w * pij;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let change: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if change < tol {
            return Ok(pi);
        }
    }
    Err(GraphError::NoConvergence(max_iters))
}

/// `Ω^0 = I, Ω^1, …, Ω^t` with `Ω^{s+1} = P Ω^s`.
pub fn omega_evolution(p: &TransitionMatrix, t_steps: usize) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(t_steps + 1);
    out.push(Matrix::identity(p.size()));
    for s in 0..t_steps {
        let next = p.entries.mul(&out[s]);
        out.push(next);
    }
    out
}

/// Steps `Ω` until all rows are within `tol` (L1) of one another and
/// returns `(steps, Ω^steps)`.
pub fn omega_until_consensus(p: &TransitionMatrix, tol: f64, max_steps: usize) -> Result<(usize, Matrix), GraphError> {
    let mut omega = Matrix::identity(p.size());
    for s in 1..=max_steps {
        omega = p.entries.mul(&omega);
        if omega.row_spread_l1() < tol {
            return Ok((s, omega));
        }
    }
    Err(GraphError::NoConvergence(max_steps))
}

/// See [`TransitionMatrix::normalization_statistic`].
pub fn normalization_statistic(topo: &Topology, rule: WeightRule, j: usize) -> Result<f64, GraphError> {
    Ok(build_transition_matrix(topo, rule)?.normalization_statistic(topo, j))
}

/// One sender-receiver term of the normalization statistic, scaled by the
/// sender's outdegree so that its expectation can be compared with the
/// degree ratio `d_j / |in(i)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub sender: usize,
    pub receiver: usize,
    pub scaled_term: f64,
    pub degree_ratio: f64,
}

pub fn pair_terms(topo: &Topology, p: &TransitionMatrix) -> Vec<PairTerm> {
    let indeg: Vec<usize> = topo.in_neighbors().iter().map(Vec::len).collect();
    let mut out = Vec::new();
    for (j, outs) in topo.out_edges.iter().enumerate() {
        let dj = outs.len() as f64;
        for &i in outs {
            let term = topo.dataset_sizes[i] as f64 / topo.dataset_sizes[j] as f64 * p.get(i, j);
            out.push(PairTerm {
                sender: j,
                receiver: i,
                scaled_term: dj * term,
                degree_ratio: dj / indeg[i] as f64,
            });
        }
    }
    out
}

/// `|D_i| / Σ|D|`.
pub fn dataset_proportions(topo: &Topology) -> Vec<f64> {
    let total: u64 = topo.dataset_sizes.iter().sum();
    topo.dataset_sizes
        .iter()
        .map(|&d| d as f64 / total as f64)
        .collect()
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
