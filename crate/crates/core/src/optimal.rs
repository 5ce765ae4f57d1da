//! Search-space counting, exhaustive enumeration and a parallel
//! branch-and-bound solver for fairness- or throughput-optimal assignments.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::str::FromStr;
use std::time::Instant;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    self, check_bandwidth, cluster_outcome, evaluate, BandwidthModel, ClusterAssignment, ClusterOutcome, ClusterSpec,
    EvalResult, MetricsError,
};
use crate::profiles::{AppProfile, WorkloadSpec};

/// Default cap on the number of leaves an exhaustive search may visit.
pub const DEFAULT_BUDGET: u64 = 100_000_000;

/// Depth of the restricted-growth prefixes handed out as parallel tasks.
const TASK_DEPTH: usize = 5;

/// Relative slack on bound comparisons, so float noise never prunes a tie.
const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("search space of {count} assignments exceeds the exploration budget of {budget}")]
    Budget { count: String, budget: u64 },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Minimize unfairness, then maximize STP.
    Fairness,
    /// Maximize STP, then minimize unfairness.
    Throughput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Clustering,
    /// Singleton clusters only.
    Partitioning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Exhaustive,
    BranchAndBound,
}

impl FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fairness" => Ok(Objective::Fairness),
            "throughput" => Ok(Objective::Throughput),
            other => Err(format!("unknown objective {other:?}")),
        }
    }
}

impl FromStr for SearchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "clustering" => Ok(SearchMode::Clustering),
            "partitioning" => Ok(SearchMode::Partitioning),
            other => Err(format!("unknown search mode {other:?}")),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exhaustive" => Ok(Strategy::Exhaustive),
            "branch_and_bound" | "bnb" => Ok(Strategy::BranchAndBound),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

fn binomial(n: usize, r: usize) -> BigUint {
    if r > n {
        return BigUint::zero();
    }
    let r = r.min(n - r);
    let mut acc = BigUint::one();
    for i in 0..r {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Row `n` of the Stirling numbers of the second kind, `S(n, 0..=n)`.
fn stirling_row(n: usize) -> Vec<BigUint> {
    let mut row = vec![BigUint::one()];
    for i in 1..=n {
        let mut next = vec![BigUint::zero(); i + 1];
        for m in 1..=i {
            let stay = if m < row.len() { &row[m] * BigUint::from(m) } else { BigUint::zero() };
            next[m] = stay + &row[m - 1];
        }
        row = next;
    }
    row
}

/// Compositions of `k` ways into `n` positive parts: `C(k-1, n-1)`.
pub fn count_partitionings(n: usize, k: usize) -> Result<BigUint, SolveError> {
    if n == 0 || n > k {
        return Err(SolveError::Infeasible(format!(
            "partitioning needs 1 <= apps <= ways, got {n} apps and {k} ways"
        )));
    }
    Ok(binomial(k - 1, n - 1))
}

/// Feasible clusterings: `sum over m of S(n, m) * C(k-1, m-1)`.
pub fn count_clusterings(n: usize, k: usize) -> Result<BigUint, SolveError> {
    if n == 0 || k == 0 {
        return Err(SolveError::Infeasible(format!(
            "clustering needs at least one app and one way, got {n} apps and {k} ways"
        )));
    }
    let s = stirling_row(n);
    Ok((1..=n.min(k)).map(|m| &s[m] * binomial(k - 1, m - 1)).sum())
}

pub fn count_space(n: usize, k: usize, mode: SearchMode) -> Result<BigUint, SolveError> {
    match mode {
        SearchMode::Clustering => count_clusterings(n, k),
        SearchMode::Partitioning => count_partitionings(n, k),
    }
}

fn each_set_partition(n: usize, max_blocks: usize, f: &mut dyn FnMut(&[Vec<usize>])) {
    fn go(i: usize, n: usize, max_blocks: usize, blocks: &mut Vec<Vec<usize>>, f: &mut dyn FnMut(&[Vec<usize>])) {
        if i == n {
            f(blocks);
            return;
        }
        for b in 0..blocks.len() {
            blocks[b].push(i);
            go(i + 1, n, max_blocks, blocks, f);
            blocks[b].pop();
        }
        if blocks.len() < max_blocks {
            blocks.push(vec![i]);
            go(i + 1, n, max_blocks, blocks, f);
            blocks.pop();
        }
    }
    go(0, n, max_blocks, &mut Vec::new(), f);
}

fn each_composition(k: usize, m: usize, f: &mut dyn FnMut(&[usize])) {
    fn go(rem: usize, left: usize, parts: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if left == 1 {
            parts.push(rem);
            f(parts);
            parts.pop();
            return;
        }
        for w in 1..=rem - (left - 1) {
            parts.push(w);
            go(rem - w, left - 1, parts, f);
            parts.pop();
        }
    }
    if m >= 1 && k >= m {
        go(k, m, &mut Vec::with_capacity(m), f);
    }
}

/// Calls `f` on every feasible canonical assignment of `n` apps to `k` ways.
pub fn for_each_assignment(n: usize, k: usize, mode: SearchMode, f: &mut dyn FnMut(ClusterAssignment)) {
    if n == 0 || k == 0 {
        return;
    }
    match mode {
        SearchMode::Partitioning => {
            if n > k {
                return;
            }
            let clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
            each_composition(k, n, &mut |w| f(ClusterAssignment::new(clusters.clone(), w.to_vec())));
        }
        SearchMode::Clustering => each_set_partition(n, n.min(k), &mut |blocks| {
            each_composition(k, blocks.len(), &mut |w| f(ClusterAssignment::new(blocks.to_vec(), w.to_vec())));
        }),
    }
}

pub fn enumerate_assignments(n: usize, k: usize, mode: SearchMode) -> Vec<ClusterAssignment> {
    let mut out = Vec::new();
    for_each_assignment(n, k, mode, &mut |a| out.push(a));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub objective: Objective,
    pub mode: SearchMode,
    pub strategy: Strategy,
    pub bandwidth: BandwidthModel,
    /// Leaf budget for the exhaustive strategy.
    pub budget: u64,
    /// Worker count; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            objective: Objective::Fairness,
            mode: SearchMode::Clustering,
            strategy: Strategy::BranchAndBound,
            bandwidth: BandwidthModel::Off,
            budget: DEFAULT_BUDGET,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub assignment: ClusterAssignment,
    pub eval: EvalResult,
    pub nodes_explored: u64,
    pub nodes_pruned: u64,
    pub wall_time_ms: f64,
}

/// JSON shape of a solver result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub assignment: Vec<ClusterSpec>,
    pub unfairness: f64,
    pub stp: f64,
    pub nodes_explored: u64,
    pub nodes_pruned: u64,
    pub wall_time_ms: f64,
}

impl Solution {
    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            assignment: self.assignment.clone().into(),
            unfairness: self.eval.unfairness,
            stp: self.eval.stp,
            nodes_explored: self.nodes_explored,
            nodes_pruned: self.nodes_pruned,
            wall_time_ms: self.wall_time_ms,
        }
    }
}

/// Total order of the objective; `Less` means `a` is preferred.
pub fn compare(objective: Objective, a: (f64, f64, &ClusterAssignment), b: (f64, f64, &ClusterAssignment)) -> Ordering {
    let by_unf = a.0.total_cmp(&b.0);
    let by_stp = b.1.total_cmp(&a.1);
    let primary = match objective {
        Objective::Fairness => by_unf.then(by_stp),
        Objective::Throughput => by_stp.then(by_unf),
    };
    primary.then_with(|| a.2.cmp(b.2))
}

#[derive(Debug, Clone)]
struct Candidate {
    unfairness: f64,
    stp: f64,
    assignment: ClusterAssignment,
}

impl Candidate {
    fn key(&self) -> (f64, f64, &ClusterAssignment) {
        (self.unfairness, self.stp, &self.assignment)
    }
}

fn pick(objective: Objective, a: Candidate, b: Candidate) -> Candidate {
    if compare(objective, b.key(), a.key()) == Ordering::Less {
        b
    } else {
        a
    }
}

pub fn solve_optimal(
    workload: &WorkloadSpec,
    objective: Objective,
    mode: SearchMode,
    strategy: Strategy,
) -> Result<Solution, SolveError> {
    solve_with(
        workload,
        &SolveOptions {
            objective,
            mode,
            strategy,
            ..Default::default()
        },
    )
}

/// Fairness-optimal clustering, the fixed reference assignment.
pub fn best_static(workload: &WorkloadSpec) -> Result<Solution, SolveError> {
    solve_optimal(workload, Objective::Fairness, SearchMode::Clustering, Strategy::BranchAndBound)
}

pub fn solve_with(workload: &WorkloadSpec, opts: &SolveOptions) -> Result<Solution, SolveError> {
    let start = Instant::now();
    let n = workload.len();
    let k = workload.nr_ways();
    if n == 0 {
        return Err(SolveError::Infeasible("empty workload".into()));
    }
    if opts.mode == SearchMode::Partitioning && n > k {
        return Err(SolveError::Infeasible(format!(
            "partitioning {k} ways among {n} applications leaves some without a way"
        )));
    }
    check_bandwidth(workload, opts.bandwidth)?;
    let (best, explored, pruned) = match opts.strategy {
        Strategy::Exhaustive => exhaustive(workload, opts)?,
        Strategy::BranchAndBound => match opts.threads {
            None => branch_and_bound(workload, opts),
            Some(t) => rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| SolveError::Pool(e.to_string()))?
                .install(|| branch_and_bound(workload, opts)),
        },
    };
    let eval = evaluate(&best.assignment, workload, opts.bandwidth)?;
    Ok(Solution {
        assignment: best.assignment,
        eval,
        nodes_explored: explored,
        nodes_pruned: pruned,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn exhaustive(workload: &WorkloadSpec, opts: &SolveOptions) -> Result<(Candidate, u64, u64), SolveError> {
    let n = workload.len();
    let k = workload.nr_ways();
    let count = count_space(n, k, opts.mode)?;
    if count > BigUint::from(opts.budget) {
        return Err(SolveError::Budget {
            count: count.to_string(),
            budget: opts.budget,
        });
    }
    let mut best: Option<Candidate> = None;
    let mut explored = 0u64;
    let mut failure = None;
    for_each_assignment(n, k, opts.mode, &mut |a| {
        explored += 1;
        match evaluate(&a, workload, opts.bandwidth) {
            Ok(r) => {
                let c = Candidate {
                    unfairness: r.unfairness,
                    stp: r.stp,
                    assignment: a,
                };
                best = Some(match best.take() {
                    None => c,
                    Some(b) => pick(opts.objective, b, c),
                });
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e.into());
    }
    debug_assert_eq!(Some(explored), count.to_u64());
    Ok((best.expect("non-empty search space"), explored, 0))
}

/// Immutable search context shared by all tasks.
struct Ctx<'a> {
    workload: &'a WorkloadSpec,
    objective: Objective,
    mode: SearchMode,
    bandwidth: BandwidthModel,
    n: usize,
    k: usize,
    /// `lo[i][h-1]` / `hi[i][h-1]`: min / max of app `i`'s slowdown over `1..=h` ways.
    lo: Vec<Vec<f64>>,
    hi: Vec<Vec<f64>>,
}

impl<'a> Ctx<'a> {
    fn new(workload: &'a WorkloadSpec, opts: &SolveOptions) -> Self {
        let k = workload.nr_ways();
        let scan = |t: &[f64], f: fn(f64, f64) -> f64| -> Vec<f64> {
            let mut acc = t[0];
            (0..k)
                .map(|i| {
                    acc = f(acc, t[i]);
                    acc
                })
                .collect()
        };
        let lo = workload.apps.iter().map(|a| scan(a.slowdown_table(), f64::min)).collect();
        let hi = workload.apps.iter().map(|a| scan(a.slowdown_table(), f64::max)).collect();
        Ctx {
            workload,
            objective: opts.objective,
            mode: opts.mode,
            bandwidth: opts.bandwidth,
            n: workload.len(),
            k,
            lo,
            hi,
        }
    }
}

/// Per-task mutable state.
struct Task<'c, 'a> {
    ctx: &'c Ctx<'a>,
    memo: HashMap<(u64, usize), ClusterOutcome>,
    incumbent: (f64, f64),
    best: Option<Candidate>,
    explored: u64,
    pruned: u64,
    /// Cluster index of each placed app.
    label: Vec<usize>,
    ways: Vec<usize>,
}

impl<'c, 'a> Task<'c, 'a> {
    fn outcome(&mut self, members: u64, ways: usize) -> &ClusterOutcome {
        let workload = self.ctx.workload;
        self.memo.entry((members, ways)).or_insert_with(|| {
            let apps: Vec<&AppProfile> = (0..64)
                .filter(|i| members >> i & 1 == 1)
                .map(|i| &workload.apps[i])
                .collect();
            cluster_outcome(&apps, ways)
        })
    }

    /// True when the bound proves no completion can beat the incumbent.
    /// `known[i]` is an exact raw slowdown, otherwise app `i` may land
    /// anywhere in `1..=cap[i]` ways.
    fn hopeless(&self, known: &[Option<f64>], cap: &dyn Fn(usize) -> usize) -> bool {
        let ctx = self.ctx;
        let mut max_lb = f64::NEG_INFINITY;
        let mut min_ub = f64::INFINITY;
        let mut stp_ub = 0.0;
        for i in 0..ctx.n {
            let (lb, ub) = match known[i] {
                Some(s) => (s, s),
                None => {
                    let h = cap(i).clamp(1, ctx.k);
                    (ctx.lo[i][h - 1], ctx.hi[i][h - 1])
                }
            };
            max_lb = max_lb.max(lb);
            min_ub = min_ub.min(ub);
            stp_ub += 1.0 / lb;
        }
        match ctx.objective {
            Objective::Fairness => max_lb / min_ub > self.incumbent.0 * (1.0 + BOUND_SLACK),
            Objective::Throughput => stp_ub < self.incumbent.1 * (1.0 - BOUND_SLACK),
        }
    }

    fn place(&mut self, i: usize, open: usize) {
        let ctx = self.ctx;
        self.explored += 1;
        let h = ctx.k + 1 - open.max(1);
        if i > 0 && self.hopeless(&vec![None; ctx.n], &|_| h) {
            self.pruned += 1;
            return;
        }
        if i == ctx.n {
            let mut members = vec![0u64; open];
            for (app, &c) in self.label.iter().enumerate() {
                members[c] |= 1 << app;
            }
            self.ways.clear();
            self.assign_ways(&members, 0, ctx.k);
            return;
        }
        let max_open = ctx.n.min(ctx.k);
        let reuse = match ctx.mode {
            SearchMode::Clustering => open,
            SearchMode::Partitioning => 0,
        };
        for c in 0..reuse {
            self.label.push(c);
            self.place(i + 1, open);
            self.label.pop();
        }
        if open < max_open {
            self.label.push(open);
            self.place(i + 1, open + 1);
            self.label.pop();
        }
    }

    fn assign_ways(&mut self, members: &[u64], j: usize, rem: usize) {
        let ctx = self.ctx;
        let m = members.len();
        if j == m {
            self.leaf(members);
            return;
        }
        let left_after = m - j - 1;
        let range = if left_after == 0 { rem..=rem } else { 1..=rem - left_after };
        for w in range {
            self.explored += 1;
            self.ways.push(w);
            let mut known = vec![None; ctx.n];
            for (c, &mask) in members.iter().enumerate().take(j + 1) {
                let ways = self.ways[c];
                let out = self.outcome(mask, ways).slowdowns.clone();
                for (idx, app) in (0..ctx.n).filter(|a| mask >> a & 1 == 1).enumerate() {
                    known[app] = Some(out[idx]);
                }
            }
            let h = (rem - w).saturating_sub(left_after.saturating_sub(1));
            if self.hopeless(&known, &|_| h) {
                self.pruned += 1;
            } else {
                self.assign_ways(members, j + 1, rem - w);
            }
            self.ways.pop();
        }
    }

    fn leaf(&mut self, members: &[u64]) {
        let ctx = self.ctx;
        let mut eff = vec![0.0; ctx.n];
        let mut raw = vec![0.0; ctx.n];
        for (c, &mask) in members.iter().enumerate() {
            let ways = self.ways[c];
            let out = self.outcome(mask, ways).clone();
            for (idx, app) in (0..ctx.n).filter(|a| mask >> a & 1 == 1).enumerate() {
                eff[app] = out.effective[idx];
                raw[app] = out.slowdowns[idx];
            }
        }
        let (_, _, unf, stp) = metrics::score(ctx.workload, &eff, &raw, ctx.bandwidth);
        let clusters: Vec<Vec<usize>> = members
            .iter()
            .map(|&mask| (0..ctx.n).filter(|a| mask >> a & 1 == 1).collect())
            .collect();
        let cand = Candidate {
            unfairness: unf,
            stp,
            assignment: ClusterAssignment::new(clusters, self.ways.clone()),
        };
        let better = match &self.best {
            None => compare(ctx.objective, cand.key(), (self.incumbent.0, self.incumbent.1, &cand.assignment))
                != Ordering::Greater,
            Some(b) => compare(ctx.objective, cand.key(), b.key()) == Ordering::Less,
        };
        if better {
            self.incumbent = (cand.unfairness, cand.stp);
            self.best = Some(cand);
        }
    }
}

/// Restricted-growth prefixes of length `depth` as (labels, open clusters).
fn prefixes(n: usize, k: usize, mode: SearchMode, depth: usize) -> Vec<(Vec<usize>, usize)> {
    let mut out = vec![(Vec::new(), 0usize)];
    let max_open = n.min(k);
    for _ in 0..depth {
        let mut next = Vec::new();
        for (labels, open) in out {
            let reuse = if mode == SearchMode::Clustering { open } else { 0 };
            for c in 0..reuse {
                let mut l = labels.clone();
                l.push(c);
                next.push((l, open));
            }
            if open < max_open {
                let mut l = labels.clone();
                l.push(open);
                next.push((l, open + 1));
            }
        }
        out = next;
    }
    out
}

fn seed(workload: &WorkloadSpec, opts: &SolveOptions) -> Candidate {
    let n = workload.len();
    let k = workload.nr_ways();
    let assignment = match opts.mode {
        SearchMode::Clustering => ClusterAssignment::single(n, k),
        SearchMode::Partitioning => {
            let ways = (0..n).map(|i| k / n + usize::from(i < k % n)).collect();
            ClusterAssignment::new((0..n).map(|i| vec![i]).collect(), ways)
        }
    };
    let r = evaluate(&assignment, workload, opts.bandwidth).expect("seed assignment is feasible");
    Candidate {
        unfairness: r.unfairness,
        stp: r.stp,
        assignment,
    }
}

fn branch_and_bound(workload: &WorkloadSpec, opts: &SolveOptions) -> (Candidate, u64, u64) {
    assert!(workload.len() <= 64, "branch and bound supports at most 64 applications");
    let ctx = Ctx::new(workload, opts);
    let seed = seed(workload, opts);
    let tasks = prefixes(ctx.n, ctx.k, ctx.mode, ctx.n.min(TASK_DEPTH));
    let results: Vec<(Option<Candidate>, u64, u64)> = tasks
        .par_iter()
        .map(|(labels, open)| {
            let mut task = Task {
                ctx: &ctx,
                memo: HashMap::new(),
                incumbent: (seed.unfairness, seed.stp),
                best: None,
                explored: 0,
                pruned: 0,
                label: labels.clone(),
                ways: Vec::new(),
            };
            task.place(labels.len(), *open);
            (task.best, task.explored, task.pruned)
        })
        .collect();
    let mut best = seed;
    let (mut explored, mut pruned) = (0, 0);
    for (cand, e, p) in results {
        explored += e;
        pruned += p;
        if let Some(c) = cand {
            best = pick(opts.objective, best, c);
        }
    }
    (best, explored, pruned)
}
