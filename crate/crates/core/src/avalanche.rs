//! Threshold cascade model of delay avalanches on random graphs.
//!
//! A single driver node receives one delay unit per insertion. Whenever a
//! node's accumulated delay exceeds the threshold it topples: each neighbour
//! independently receives `m` times the toppling node's delay with
//! probability `p_trans`, and the toppling node resets to zero.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::rng;
use crate::stats::{linear_fit, mean};

pub const DEFAULT_PERIOD: u64 = 17;
pub const DEFAULT_THRESHOLD: f64 = 4.0;
pub const DEFAULT_AMPLIFICATION: f64 = 0.9;
pub const DEFAULT_NODES: usize = 70;
pub const DEFAULT_EDGES: usize = 240;
pub const DEFAULT_P_TRANS: f64 = 0.05;
pub const DEFAULT_MAX_TOPPLINGS: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum AvalancheError {
    #[error("cannot build a connected simple graph with {n} nodes and {m} edges")]
    Infeasible { n: usize, m: usize },
    #[error("no connected graph found after {0} attempts")]
    Disconnected(usize),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(
        "cascade exceeded {limit} topplings at step {step}; the parameters are supercritical"
    )]
    Guard { step: u64, limit: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvaGraph {
    n: usize,
    edges: Vec<(u32, u32)>,
    adjacency: Vec<Vec<u32>>,
}

impl AvaGraph {
    /// Simple undirected graph from an edge list; loops and duplicates are
    /// rejected.
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Result<Self, AvalancheError> {
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a == b || a as usize >= n || b as usize >= n || !set.insert((a.min(b), a.max(b))) {
                return Err(AvalancheError::Params(format!("bad edge ({a}, {b})")));
            }
        }
        let edges: Vec<(u32, u32)> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adjacency[a as usize].push(b);
            adjacency[b as usize].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(AvaGraph { n, edges, adjacency })
    }

    pub fn cycle(n: usize) -> Self {
        let edges: Vec<(u32, u32)> = (0..n as u32).map(|i| (i, (i + 1) % n as u32)).collect();
        Self::from_edges(n, &edges).expect("cycle is simple for n >= 3")
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn neighbours(&self, node: usize) -> &[u32] {
        &self.adjacency[node]
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(x) = stack.pop() {
            for &y in &self.adjacency[x] {
                if !seen[y as usize] {
                    seen[y as usize] = true;
                    count += 1;
                    stack.push(y as usize);
                }
            }
        }
        count == self.n
    }
}

const MAX_GRAPH_ATTEMPTS: usize = 100_000;

/// Uniform simple graph with exactly `m` edges, redrawn until connected.
pub fn random_graph(n: usize, m: usize, seed: u64) -> Result<AvaGraph, AvalancheError> {
    let pairs = n * n.saturating_sub(1) / 2;
    if n == 0 || m + 1 < n || m > pairs {
        return Err(AvalancheError::Infeasible { n, m });
    }
    let mut rng = rng::stream(seed, "avalanche-graph");
    for _ in 0..MAX_GRAPH_ATTEMPTS {
        let edges: Vec<(u32, u32)> = sample(&mut rng, pairs, m)
            .into_iter()
            .map(|k| pair_of_index(k, n))
            .collect();
        let g = AvaGraph::from_edges(n, &edges).expect("distinct pairs");
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(AvalancheError::Disconnected(MAX_GRAPH_ATTEMPTS))
}

/// Maps `0..n(n-1)/2` onto pairs `(a, b)` with `a < b`, row by row.
fn pair_of_index(mut k: usize, n: usize) -> (u32, u32) {
    let mut a = 0;
    while k >= n - 1 - a {
        k -= n - 1 - a;
        a += 1;
    }
    (a as u32, (a + 1 + k) as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Driver {
    /// One insertion whenever `t` is a multiple of `period`.
    Periodic { period: u64 },
    /// One insertion per step with probability `1 / period`.
    Stochastic { period: u64 },
}

impl Driver {
    pub fn name(&self) -> &'static str {
        match self {
            Driver::Periodic { .. } => "periodic",
            Driver::Stochastic { .. } => "stochastic",
        }
    }

    pub fn period(&self) -> u64 {
        match *self {
            Driver::Periodic { period } | Driver::Stochastic { period } => period,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    /// Cascades resolve completely between two time steps.
    #[default]
    Instantaneous,
    /// One synchronous toppling round per time step; insertions continue
    /// while a cascade is running.
    Stepped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AvaParams {
    pub p_trans: f64,
    pub m: f64,
    pub threshold: f64,
    pub driver: Driver,
    pub driver_node: usize,
    pub unit: f64,
    pub max_topplings: u64,
    pub relaxation: Relaxation,
    /// Delay removed from every node at the start of each step.
    pub recovery: f64,
}

impl Default for AvaParams {
    fn default() -> Self {
        AvaParams {
            p_trans: DEFAULT_P_TRANS,
            m: DEFAULT_AMPLIFICATION,
            threshold: DEFAULT_THRESHOLD,
            driver: Driver::Periodic {
                period: DEFAULT_PERIOD,
            },
            driver_node: 0,
            unit: 1.0,
            max_topplings: DEFAULT_MAX_TOPPLINGS,
            relaxation: Relaxation::Instantaneous,
            recovery: 0.0,
        }
    }
}

impl AvaParams {
    pub fn validate(&self, g: &AvaGraph) -> Result<(), AvalancheError> {
        let bad = |m: &str| Err(AvalancheError::Params(m.to_string()));
        if !(0.0..=1.0).contains(&self.p_trans) {
            return bad("p_trans must lie in [0, 1]");
        }
        if !(self.m >= 0.0 && self.m.is_finite()) {
            return bad("m must be >= 0");
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return bad("threshold must be >= 0");
        }
        if !(self.unit > 0.0 && self.unit.is_finite()) {
            return bad("unit must be > 0");
        }
        if !(self.recovery >= 0.0 && self.recovery.is_finite()) {
            return bad("recovery must be >= 0");
        }
        if self.driver.period() == 0 {
            return bad("driver period must be >= 1");
        }
        if self.driver_node >= g.node_count() {
            return bad("driver node outside the graph");
        }
        Ok(())
    }

    pub fn with_driver(&self, driver: Driver) -> Self {
        AvaParams {
            driver,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AvaRun {
    /// Topplings per avalanche.
    pub lengths: Vec<u64>,
    /// Synchronous toppling rounds per avalanche.
    pub durations: Vec<u64>,
    /// Step at which each avalanche started.
    pub starts: Vec<u64>,
    pub insertions: u64,
    pub steps: u64,
}

struct Cascade<'a, R> {
    g: &'a AvaGraph,
    params: &'a AvaParams,
    d: Vec<f64>,
    incoming: Vec<f64>,
    toppling: Vec<usize>,
    rng: R,
}

impl<R: Rng> Cascade<'_, R> {
    /// One synchronous round; returns the number of topplings.
    fn round(&mut self) -> u64 {
        let threshold = self.params.threshold;
        self.toppling.clear();
        self.toppling
            .extend((0..self.d.len()).filter(|&i| self.d[i] > threshold));
        for &i in &self.toppling {
            let amount = self.params.m * self.d[i];
            for &j in self.g.neighbours(i) {
                if self.params.p_trans > 0.0 && self.rng.gen_bool(self.params.p_trans) {
                    self.incoming[j as usize] += amount;
                }
            }
        }
        for &i in &self.toppling {
            self.d[i] = 0.0;
        }
        for (d, inc) in self.d.iter_mut().zip(self.incoming.iter_mut()) {
            *d += *inc;
            *inc = 0.0;
        }
        self.toppling.len() as u64
    }
}

/// Simulates `steps` time steps. Driver decisions and transmission coins use
/// separate streams derived from `seed`, so two drivers run with the same seed
/// see the same transmission coin sequence.
pub fn run(g: &AvaGraph, params: &AvaParams, steps: u64, seed: u64) -> Result<AvaRun, AvalancheError> {
    simulate(g, params, steps, seed, |_| {})
}

/// `run` with a callback receiving the delays at the end of every step.
fn simulate<F: FnMut(&[f64])>(
    g: &AvaGraph,
    params: &AvaParams,
    steps: u64,
    seed: u64,
    mut observe: F,
) -> Result<AvaRun, AvalancheError> {
    params.validate(g)?;
    if steps == 0 {
        return Err(AvalancheError::Params("steps must be >= 1".into()));
    }
    let mut driver_rng = rng::stream(seed, "avalanche-driver");
    let mut sim = Cascade {
        g,
        params,
        d: vec![0.0; g.node_count()],
        incoming: vec![0.0; g.node_count()],
        toppling: Vec::new(),
        rng: rng::stream(seed, "avalanche-transmission"),
    };
    let mut out = AvaRun {
        steps,
        ..AvaRun::default()
    };
    let mut current: Option<(u64, u64)> = None;
    for t in 0..steps {
        if params.recovery > 0.0 {
            for d in &mut sim.d {
                *d = (*d - params.recovery).max(0.0);
            }
        }
        let insert = match params.driver {
            Driver::Periodic { period } => t % period == 0,
            Driver::Stochastic { period } => driver_rng.gen_bool(1.0 / period as f64),
        };
        if insert {
            sim.d[params.driver_node] += params.unit;
            out.insertions += 1;
        }
        match params.relaxation {
            Relaxation::Instantaneous => {
                let (mut length, mut rounds) = (0u64, 0u64);
                loop {
                    let k = sim.round();
                    if k == 0 {
                        break;
                    }
                    length += k;
                    rounds += 1;
                    if length > params.max_topplings {
                        return Err(AvalancheError::Guard {
                            step: t,
                            limit: params.max_topplings,
                        });
                    }
                }
                if length > 0 {
                    out.lengths.push(length);
                    out.durations.push(rounds);
                    out.starts.push(t);
                }
            }
            Relaxation::Stepped => {
                let k = sim.round();
                if k > 0 {
                    if current.is_none() {
                        out.starts.push(t);
                    }
                    let c = current.get_or_insert((0, 0));
                    c.0 += k;
                    c.1 += 1;
                    if c.0 > params.max_topplings {
                        return Err(AvalancheError::Guard {
                            step: t,
                            limit: params.max_topplings,
                        });
                    }
                } else if let Some((length, rounds)) = current.take() {
                    out.lengths.push(length);
                    out.durations.push(rounds);
                }
            }
        }
        observe(&sim.d);
    }
    if let Some((length, rounds)) = current {
        out.lengths.push(length);
        out.durations.push(rounds);
    }
    Ok(out)
}

impl AvaRun {
    /// Mean avalanche length per block of `window` steps, by start step.
    /// Blocks without avalanches are `None`.
    pub fn window_means(&self, window: u64) -> Vec<Option<f64>> {
        let window = window.max(1);
        let blocks = self.steps.div_ceil(window) as usize;
        let mut acc = vec![(0u64, 0u64); blocks];
        for (&start, &len) in self.starts.iter().zip(&self.lengths) {
            let b = &mut acc[(start / window) as usize];
            b.0 += len;
            b.1 += 1;
        }
        acc.into_iter()
            .map(|(sum, n)| (n > 0).then(|| sum as f64 / n as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvalancheStats {
    pub avalanches: usize,
    pub mean_length: f64,
    pub histogram: BTreeMap<u64, u64>,
    /// Slope of ln(frequency) against length above the histogram mode.
    pub tail_slope: Option<f64>,
    pub tail_r2: Option<f64>,
}

/// `None` if no avalanche was recorded.
pub fn avalanche_stats(runs: &[AvaRun]) -> Option<AvalancheStats> {
    let lengths: Vec<u64> = runs.iter().flat_map(|r| r.lengths.iter().copied()).collect();
    if lengths.is_empty() {
        return None;
    }
    let mut histogram = BTreeMap::new();
    for &l in &lengths {
        *histogram.entry(l).or_insert(0u64) += 1;
    }
    let (tail_slope, tail_r2) = tail_fit(&histogram);
    Some(AvalancheStats {
        avalanches: lengths.len(),
        mean_length: lengths.iter().sum::<u64>() as f64 / lengths.len() as f64,
        histogram,
        tail_slope,
        tail_r2,
    })
}

/// Least-squares fit of ln(count) against length over the lengths above the
/// mode (smallest length on ties), up to the first length never observed.
pub fn tail_fit(histogram: &BTreeMap<u64, u64>) -> (Option<f64>, Option<f64>) {
    let Some((&mode, _)) = histogram
        .iter()
        .fold(None, |best: Option<(&u64, &u64)>, e| match best {
            Some(b) if b.1 >= e.1 => Some(b),
            _ => Some(e),
        })
    else {
        return (None, None);
    };
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (&l, &c) in histogram.range(mode + 1..) {
        if l != mode + 1 + x.len() as u64 || c == 0 {
            break;
        }
        x.push(l as f64);
        y.push((c as f64).ln());
    }
    match linear_fit(&x, &y) {
        Some(fit) => (Some(fit.slope), fit.r_squared),
        None => (None, None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPair {
    pub seed: u64,
    pub periodic: AvaSummary,
    pub stochastic: AvaSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvaSummary {
    pub avalanches: usize,
    pub mean_length: Option<f64>,
    pub tail_slope: Option<f64>,
    pub tail_r2: Option<f64>,
}

impl AvaSummary {
    pub fn of(run: &AvaRun) -> Self {
        let stats = avalanche_stats(std::slice::from_ref(run));
        AvaSummary {
            avalanches: run.lengths.len(),
            mean_length: stats.as_ref().map(|s| s.mean_length),
            tail_slope: stats.as_ref().and_then(|s| s.tail_slope),
            tail_r2: stats.as_ref().and_then(|s| s.tail_r2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverComparison {
    pub pairs: Vec<SeedPair>,
    pub periodic_mean: Option<f64>,
    pub stochastic_mean: Option<f64>,
    /// Paired t statistic of periodic minus stochastic per-seed means.
    pub t_statistic: Option<f64>,
    /// One-sided p-value for "periodic mean > stochastic mean".
    pub p_value: Option<f64>,
    /// Pooled statistics over all runs of each driver.
    pub periodic_stats: Option<AvalancheStats>,
    pub stochastic_stats: Option<AvalancheStats>,
    /// Raw `(periodic, stochastic)` runs in seed order.
    #[serde(skip)]
    pub runs: Vec<(AvaRun, AvaRun)>,
}

/// Seed of the `index`-th run under `master`.
pub fn seed_for(master: u64, index: u64) -> u64 {
    rng::derive_seed(master, &format!("seed-{index}"))
}

/// Runs both drivers on the same graph for seeds `0..n_seeds` (derived from
/// `master_seed`). Seeds run in parallel and are reduced in seed order.
pub fn compare_drivers(
    g: &AvaGraph,
    params: &AvaParams,
    n_seeds: usize,
    steps: u64,
    master_seed: u64,
) -> Result<DriverComparison, AvalancheError> {
    if n_seeds < 2 {
        return Err(AvalancheError::Params("need at least 2 seeds".into()));
    }
    let period = params.driver.period();
    let periodic = params.with_driver(Driver::Periodic { period });
    let stochastic = params.with_driver(Driver::Stochastic { period });
    let runs: Vec<(u64, AvaRun, AvaRun)> = (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let seed = seed_for(master_seed, i);
            Ok((
                seed,
                run(g, &periodic, steps, seed)?,
                run(g, &stochastic, steps, seed)?,
            ))
        })
        .collect::<Result<_, AvalancheError>>()?;

    let pairs: Vec<SeedPair> = runs
        .iter()
        .map(|(seed, a, b)| SeedPair {
            seed: *seed,
            periodic: AvaSummary::of(a),
            stochastic: AvaSummary::of(b),
        })
        .collect();
    let diffs: Vec<f64> = pairs
        .iter()
        .filter_map(|p| Some(p.periodic.mean_length? - p.stochastic.mean_length?))
        .collect();
    let (t_statistic, p_value) = paired_one_sided(&diffs);
    let means = |f: fn(&SeedPair) -> Option<f64>| {
        let v: Vec<f64> = pairs.iter().filter_map(f).collect();
        mean(&v)
    };
    let periodic_runs: Vec<AvaRun> = runs.iter().map(|r| r.1.clone()).collect();
    let stochastic_runs: Vec<AvaRun> = runs.iter().map(|r| r.2.clone()).collect();
    Ok(DriverComparison {
        periodic_mean: means(|p| p.periodic.mean_length),
        stochastic_mean: means(|p| p.stochastic.mean_length),
        t_statistic,
        p_value,
        periodic_stats: avalanche_stats(&periodic_runs),
        stochastic_stats: avalanche_stats(&stochastic_runs),
        pairs,
        runs: runs.into_iter().map(|(_, a, b)| (a, b)).collect(),
    })
}

/// One-sided paired t-test of `mean(diffs) > 0`.
pub fn paired_one_sided(diffs: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = diffs.len();
    if n < 2 {
        return (None, None);
    }
    let m = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return (None, None);
    }
    let t = m / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n >= 2");
    (Some(t), Some(1.0 - dist.cdf(t)))
}

fn write_rows<'a, W: Write>(
    mut out: W,
    rows: impl Iterator<Item = (&'a str, u64, &'a AvaSummary)>,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(comment) = comment {
        writeln!(out, "# {comment}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["driver", "seed", "avalanches", "mean_length", "tail_slope", "tail_r2"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (name, seed, s) in rows {
        w.write_record([
            name.to_string(),
            seed.to_string(),
            s.avalanches.to_string(),
            opt(s.mean_length),
            opt(s.tail_slope),
            opt(s.tail_r2),
        ])?;
    }
    w.flush()
}

/// `driver,seed,avalanches,mean_length,tail_slope,tail_r2`; undefined values
/// are left empty.
pub fn write_results_csv<W: Write>(
    out: W,
    pairs: &[SeedPair],
    comment: Option<&str>,
) -> std::io::Result<()> {
    let rows = pairs.iter().flat_map(|p| {
        [
            ("periodic", p.seed, &p.periodic),
            ("stochastic", p.seed, &p.stochastic),
        ]
    });
    write_rows(out, rows, comment)
}

/// Results rows for runs of a single driver, as `(seed, summary)`.
pub fn write_driver_results_csv<W: Write>(
    out: W,
    driver: &Driver,
    runs: &[(u64, AvaSummary)],
    comment: Option<&str>,
) -> std::io::Result<()> {
    write_rows(out, runs.iter().map(|(seed, s)| (driver.name(), *seed, s)), comment)
}

/// `driver,seed,window,mean_length`, one row per block of steps.
pub fn write_windows_csv<W: Write>(
    mut out: W,
    rows: &[(&str, u64, Vec<Option<f64>>)],
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(comment) = comment {
        writeln!(out, "# {comment}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["driver", "seed", "window", "mean_length"])?;
    for (driver, seed, means) in rows {
        for (i, m) in means.iter().enumerate() {
            w.write_record([
                driver.to_string(),
                seed.to_string(),
                i.to_string(),
                m.map(|x| x.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()
}

/// `length,count`
pub fn write_histogram_csv<W: Write>(
    mut out: W,
    histogram: &BTreeMap<u64, u64>,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(comment) = comment {
        writeln!(out, "# {comment}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["length", "count"])?;
    for (l, c) in histogram {
        w.write_record([l.to_string(), c.to_string()])?;
    }
    w.flush()
}
