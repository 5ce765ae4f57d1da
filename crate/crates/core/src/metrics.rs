//! Scoring of cluster assignments.
//!
//! Apps that share a cluster split its ways according to a miss-rate
//! proportional fixed point: `e_i = w * m_i(e_i) / sum_j m_j(e_j)` where `m`
//! is the app's LLC misses per kilocycle at its current share. A singleton
//! cluster gives its app exactly `w` ways. Slowdowns are then read from each
//! app's profile at its effective share, optionally scaled by a single
//! bandwidth-contention factor, and summarised as unfairness (max/min
//! slowdown) and STP (sum of inverse slowdowns).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiles::{AppProfile, ProfileError, WorkloadSpec};

/// Damping applied to each fixed-point update.
pub const SHARING_DAMPING: f64 = 0.5;
/// Convergence tolerance of the fixed point, in ways.
pub const SHARING_TOLERANCE: f64 = 1e-3;
pub const SHARING_MAX_ITERATIONS: usize = 50;

/// Which of the four feasibility restrictions an assignment breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Restriction {
    /// (i) `1 <= m <= min(n, k)`
    ClusterCount,
    /// (ii) clusters cover every application
    Coverage,
    /// (iii) clusters are pairwise disjoint
    Disjointness,
    /// (iv) every cluster has at least one way and the ways add up to `k`
    WayBudget,
}

impl fmt::Display for Restriction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Restriction::ClusterCount => "(i) cluster count",
            Restriction::Coverage => "(ii) coverage",
            Restriction::Disjointness => "(iii) disjointness",
            Restriction::WayBudget => "(iv) way budget",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("infeasible assignment, restriction {restriction}: {detail}")]
pub struct FeasibilityError {
    pub restriction: Restriction,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Feasibility(#[from] FeasibilityError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("slowdown list is empty")]
    EmptySlowdowns,
    #[error("slowdown {0} is not positive")]
    NonPositiveSlowdown(f64),
    #[error("bandwidth model: {0}")]
    BandwidthConfig(String),
}

/// Cluster set `T` with its way vector `W`.
///
/// The derived ordering compares clusters first and way counts second; on
/// canonical assignments this is the tie-break order used by the solver.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<ClusterSpec>", try_from = "Vec<ClusterSpec>")]
pub struct ClusterAssignment {
    pub clusters: Vec<Vec<usize>>,
    pub ways: Vec<usize>,
}

/// JSON shape of a single cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub members: Vec<usize>,
    pub ways: usize,
}

impl From<ClusterAssignment> for Vec<ClusterSpec> {
    fn from(a: ClusterAssignment) -> Self {
        a.clusters
            .into_iter()
            .zip(a.ways)
            .map(|(members, ways)| ClusterSpec { members, ways })
            .collect()
    }
}

impl TryFrom<Vec<ClusterSpec>> for ClusterAssignment {
    type Error = String;
    fn try_from(v: Vec<ClusterSpec>) -> Result<Self, String> {
        let (clusters, ways) = v.into_iter().map(|c| (c.members, c.ways)).unzip();
        Ok(ClusterAssignment { clusters, ways })
    }
}

impl ClusterAssignment {
    pub fn new(clusters: Vec<Vec<usize>>, ways: Vec<usize>) -> Self {
        ClusterAssignment { clusters, ways }
    }

    /// Everyone in one cluster with all `k` ways.
    pub fn single(n: usize, k: usize) -> Self {
        ClusterAssignment {
            clusters: vec![(0..n).collect()],
            ways: vec![k],
        }
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Index of the cluster holding `app`.
    pub fn cluster_of(&self, app: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(&app))
    }

    /// Ways of the cluster holding `app`.
    pub fn ways_of(&self, app: usize) -> Option<usize> {
        self.cluster_of(app).map(|c| self.ways[c])
    }

    /// Members sorted within each cluster, clusters ordered by least member.
    pub fn canonical(&self) -> ClusterAssignment {
        let mut pairs: Vec<(Vec<usize>, usize)> = self
            .clusters
            .iter()
            .zip(&self.ways)
            .map(|(c, &w)| {
                let mut c = c.clone();
                c.sort_unstable();
                (c, w)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.first().cmp(&b.0.first()));
        let (clusters, ways) = pairs.into_iter().unzip();
        ClusterAssignment { clusters, ways }
    }

    /// Checks restrictions (i)-(iv) for a workload of `n` apps on `k` ways.
    pub fn validate(&self, n: usize, k: usize) -> Result<(), FeasibilityError> {
        let m = self.clusters.len();
        let fail = |restriction, detail: String| Err(FeasibilityError { restriction, detail });
        if m == 0 || m > n.min(k) {
            return fail(
                Restriction::ClusterCount,
                format!("{m} clusters, allowed 1..={}", n.min(k)),
            );
        }
        if self.ways.len() != m {
            return fail(
                Restriction::WayBudget,
                format!("{} way entries for {m} clusters", self.ways.len()),
            );
        }
        let mut seen = vec![false; n];
        for (ci, c) in self.clusters.iter().enumerate() {
            if c.is_empty() {
                return fail(Restriction::Coverage, format!("cluster {ci} is empty"));
            }
            for &a in c {
                if a >= n {
                    return fail(
                        Restriction::Coverage,
                        format!("cluster {ci} names app {a}, workload has {n}"),
                    );
                }
                if seen[a] {
                    return fail(
                        Restriction::Disjointness,
                        format!("app {a} appears in more than one cluster slot"),
                    );
                }
                seen[a] = true;
            }
        }
        if let Some(a) = seen.iter().position(|s| !s) {
            return fail(Restriction::Coverage, format!("app {a} is not assigned"));
        }
        if let Some(ci) = self.ways.iter().position(|&w| w == 0) {
            return fail(Restriction::WayBudget, format!("cluster {ci} has 0 ways"));
        }
        let total: usize = self.ways.iter().sum();
        if total != k {
            return fail(
                Restriction::WayBudget,
                format!("ways add up to {total}, cache has {k}"),
            );
        }
        Ok(())
    }
}

impl fmt::Display for ClusterAssignment {
    /// Compact `members:ways;...` form, the same syntax `FromStr` accepts.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (c, w)) in self.clusters.iter().zip(&self.ways).enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            let members: Vec<String> = c.iter().map(|a| a.to_string()).collect();
            write!(f, "{}:{}", members.join(","), w)?;
        }
        Ok(())
    }
}

impl FromStr for ClusterAssignment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let mut clusters = Vec::new();
        let mut ways = Vec::new();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (members, w) = part
                .split_once(':')
                .ok_or_else(|| format!("cluster {part:?} lacks ':ways'"))?;
            let members = members
                .split(',')
                .map(|m| m.trim().parse::<usize>().map_err(|_| format!("bad member {m:?}")))
                .collect::<Result<Vec<_>, _>>()?;
            clusters.push(members);
            ways.push(w.trim().parse().map_err(|_| format!("bad way count {w:?}"))?);
        }
        Ok(ClusterAssignment { clusters, ways })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthModel {
    #[default]
    Off,
    /// Every slowdown is multiplied by `max(1, total bandwidth / peak)`.
    Linear,
}

impl FromStr for BandwidthModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(BandwidthModel::Off),
            "linear" => Ok(BandwidthModel::Linear),
            other => Err(format!("unknown bandwidth model {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppEval {
    pub name: String,
    pub effective_ways: f64,
    pub slowdown: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_app: Vec<AppEval>,
    pub unfairness: f64,
    pub stp: f64,
    pub bandwidth_factor: f64,
    /// False when some shared cluster fell back to equal shares.
    pub converged: bool,
}

impl EvalResult {
    pub fn slowdowns(&self) -> Vec<f64> {
        self.per_app.iter().map(|a| a.slowdown).collect()
    }

    pub fn effective_ways(&self) -> Vec<f64> {
        self.per_app.iter().map(|a| a.effective_ways).collect()
    }
}

/// Effective ways and raw (pre-bandwidth) slowdowns of one cluster's members,
/// in the order the members were given.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub effective: Vec<f64>,
    pub slowdowns: Vec<f64>,
    pub converged: bool,
}

/// Splits `ways` among apps sharing one cluster.
pub fn share_ways(apps: &[&AppProfile], ways: usize) -> (Vec<f64>, bool) {
    let j = apps.len();
    let w = ways as f64;
    if j == 1 {
        return (vec![w], true);
    }
    let equal = vec![w / j as f64; j];
    let misses = |e: &[f64]| -> Vec<f64> {
        apps.iter()
            .zip(e)
            .map(|(a, &ei)| a.metric_clamped(a.llcmpkc(), ei))
            .collect()
    };
    let target = |e: &[f64]| -> Option<Vec<f64>> {
        let m = misses(e);
        let total: f64 = m.iter().sum();
        if total <= 0.0 {
            return None;
        }
        Some(m.iter().map(|mi| w * mi / total).collect())
    };
    let mut e = equal.clone();
    for _ in 0..SHARING_MAX_ITERATIONS {
        let t = match target(&e) {
            Some(t) => t,
            // nobody misses: equal split
            None => return (equal, true),
        };
        let delta = t
            .iter()
            .zip(&e)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if delta < SHARING_TOLERANCE {
            return (t, true);
        }
        for (ei, ti) in e.iter_mut().zip(&t) {
            *ei = SHARING_DAMPING * *ei + (1.0 - SHARING_DAMPING) * ti;
        }
    }
    (equal, false)
}

/// Evaluates one cluster in isolation.
pub fn cluster_outcome(apps: &[&AppProfile], ways: usize) -> ClusterOutcome {
    let (effective, converged) = share_ways(apps, ways);
    let slowdowns = apps
        .iter()
        .zip(&effective)
        .map(|(a, &e)| a.slowdown_clamped(e))
        .collect();
    ClusterOutcome {
        effective,
        slowdowns,
        converged,
    }
}

/// Per-app effective ways under `assignment`.
pub fn effective_ways(
    assignment: &ClusterAssignment,
    workload: &WorkloadSpec,
) -> Result<Vec<f64>, MetricsError> {
    assignment.validate(workload.len(), workload.nr_ways())?;
    let mut out = vec![0.0; workload.len()];
    for (c, &w) in assignment.clusters.iter().zip(&assignment.ways) {
        let apps: Vec<&AppProfile> = c.iter().map(|&a| &workload.apps[a]).collect();
        let (e, _) = share_ways(&apps, w);
        for (&a, ei) in c.iter().zip(e) {
            out[a] = ei;
        }
    }
    Ok(out)
}

/// Scores `assignment` on `workload`.
pub fn evaluate(
    assignment: &ClusterAssignment,
    workload: &WorkloadSpec,
    bandwidth: BandwidthModel,
) -> Result<EvalResult, MetricsError> {
    assignment.validate(workload.len(), workload.nr_ways())?;
    check_bandwidth(workload, bandwidth)?;
    let n = workload.len();
    let mut eff = vec![0.0; n];
    let mut raw = vec![0.0; n];
    let mut converged = true;
    for (c, &w) in assignment.clusters.iter().zip(&assignment.ways) {
        let apps: Vec<&AppProfile> = c.iter().map(|&a| &workload.apps[a]).collect();
        let out = cluster_outcome(&apps, w);
        converged &= out.converged;
        for (i, &a) in c.iter().enumerate() {
            eff[a] = out.effective[i];
            raw[a] = out.slowdowns[i];
        }
    }
    Ok(assemble(workload, &eff, &raw, converged, bandwidth))
}

pub(crate) fn check_bandwidth(workload: &WorkloadSpec, model: BandwidthModel) -> Result<(), MetricsError> {
    if model == BandwidthModel::Off {
        return Ok(());
    }
    if workload.cache.peak_bandwidth.is_none() {
        return Err(MetricsError::BandwidthConfig(
            "linear model needs peak_bandwidth in the cache configuration".into(),
        ));
    }
    if let Some(a) = workload.apps.iter().find(|a| a.bandwidth().is_none()) {
        return Err(MetricsError::BandwidthConfig(format!(
            "linear model needs a bandwidth table for {}",
            a.name()
        )));
    }
    Ok(())
}

/// Contention factor for a set of (profile, effective ways) pairs. Callers
/// have already checked that tables and peak bandwidth are present.
pub(crate) fn bandwidth_factor<'a>(
    apps: impl Iterator<Item = (&'a AppProfile, f64)>,
    peak: f64,
) -> f64 {
    let demand: f64 = apps
        .map(|(p, e)| p.metric_clamped(p.bandwidth().expect("checked"), e))
        .sum();
    (demand / peak).max(1.0)
}

/// Bandwidth factor, final slowdowns, unfairness and STP for one set of
/// per-app results. Every scoring path goes through here so identical inputs
/// give bit-identical numbers.
pub(crate) fn score(
    workload: &WorkloadSpec,
    effective: &[f64],
    raw_slowdowns: &[f64],
    bandwidth: BandwidthModel,
) -> (f64, Vec<f64>, f64, f64) {
    let factor = match bandwidth {
        BandwidthModel::Off => 1.0,
        BandwidthModel::Linear => bandwidth_factor(
            workload.apps.iter().zip(effective.iter().copied()),
            workload.cache.peak_bandwidth.expect("checked"),
        ),
    };
    let slowdowns: Vec<f64> = raw_slowdowns.iter().map(|s| s * factor).collect();
    let unfairness = max_over_min(&slowdowns);
    let stp = slowdowns.iter().map(|s| 1.0 / s).sum();
    (factor, slowdowns, unfairness, stp)
}

/// Final scoring step shared by `evaluate` and the optimal solver.
pub(crate) fn assemble(
    workload: &WorkloadSpec,
    effective: &[f64],
    raw_slowdowns: &[f64],
    converged: bool,
    bandwidth: BandwidthModel,
) -> EvalResult {
    let (factor, slowdowns, unfairness, stp) = score(workload, effective, raw_slowdowns, bandwidth);
    let per_app = workload
        .apps
        .iter()
        .zip(effective)
        .zip(&slowdowns)
        .map(|((a, &e), &s)| AppEval {
            name: a.name().to_string(),
            effective_ways: e,
            slowdown: s,
        })
        .collect();
    EvalResult {
        per_app,
        unfairness,
        stp,
        bandwidth_factor: factor,
        converged,
    }
}

fn max_over_min(s: &[f64]) -> f64 {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

fn check_slowdowns(slowdowns: &[f64]) -> Result<(), MetricsError> {
    if slowdowns.is_empty() {
        return Err(MetricsError::EmptySlowdowns);
    }
    if let Some(&s) = slowdowns.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(MetricsError::NonPositiveSlowdown(s));
    }
    Ok(())
}

/// Maximum slowdown divided by minimum slowdown.
pub fn unfairness(slowdowns: &[f64]) -> Result<f64, MetricsError> {
    check_slowdowns(slowdowns)?;
    Ok(max_over_min(slowdowns))
}

/// System throughput: sum of inverse slowdowns.
pub fn stp(slowdowns: &[f64]) -> Result<f64, MetricsError> {
    check_slowdowns(slowdowns)?;
    Ok(slowdowns.iter().map(|s| 1.0 / s).sum())
}
