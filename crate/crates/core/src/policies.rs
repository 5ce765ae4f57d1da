//! LFOC's static decision logic: application classification, slowdown-driven
//! lookahead way allocation and the cache-clustering algorithm, plus the two
//! baseline assignments used for comparison.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ClusterAssignment;
use crate::profiles::{AppProfile, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("lookahead budget {budget} is smaller than the {apps} applications to serve")]
    Budget { budget: usize, apps: usize },
    #[error("infeasible way count: {0}")]
    InfeasibleWays(String),
    #[error("application {0} appears in more than one class set")]
    Overlap(usize),
    #[error("no applications to partition")]
    Empty,
    #[error("incomplete tables: {0}")]
    IncompleteTables(String),
    #[error("params line {line}: {msg}")]
    Params { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppClass {
    Streaming,
    Sensitive,
    LightSharing,
    /// Only used online, before an application has been sampled.
    Unknown,
}

impl fmt::Display for AppClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AppClass::Streaming => "streaming",
            AppClass::Sensitive => "sensitive",
            AppClass::LightSharing => "light_sharing",
            AppClass::Unknown => "unknown",
        })
    }
}

/// How light-sharing apps are counted against a streaming cluster's spare
/// capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// `gaps = r - |cluster| * gaps_per_streaming`, as written in the
    /// published algorithm. With the default parameters this is never
    /// positive for a populated cluster.
    #[default]
    Literal,
    /// `gaps = gaps_per_streaming * streaming members - light-sharing members`.
    Capacity,
}

/// Reading of the "slowdown >= 1.05 for a number of ways >= 2" criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitiveRule {
    /// Slowdown at some allocation of at least `sensitive_min_ways` ways
    /// reaches the threshold.
    #[default]
    AllocationAtLeast,
    /// Slowdown reaches the threshold at `sensitive_min_ways` or more distinct
    /// way counts.
    DistinctWayCounts,
}

/// Every tunable of the policy. Defaults match the published setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfocParams {
    pub max_streaming_way: usize,
    pub gaps_per_streaming: usize,
    pub streaming_slowdown_lo: f64,
    pub streaming_slowdown_hi: f64,
    pub streaming_llcmpkc: f64,
    pub sensitive_slowdown: f64,
    pub sensitive_min_ways: usize,
    pub high_threshold: f64,
    pub low_threshold_ratio: f64,
    pub stall_threshold: f64,
    pub critical_slowdown: f64,
    pub history_len: usize,
    pub warmup_periods: usize,
    pub normal_window: u64,
    pub sampling_window: u64,
    pub repartition_period_ms: f64,
    pub gap_mode: GapMode,
    pub sensitive_rule: SensitiveRule,
}

impl Default for LfocParams {
    fn default() -> Self {
        LfocParams {
            max_streaming_way: 5,
            gaps_per_streaming: 3,
            streaming_slowdown_lo: 1.03,
            streaming_slowdown_hi: 1.06,
            streaming_llcmpkc: 10.0,
            sensitive_slowdown: 1.05,
            sensitive_min_ways: 2,
            high_threshold: 10.0,
            low_threshold_ratio: 0.30,
            stall_threshold: 0.25,
            critical_slowdown: 1.05,
            history_len: 5,
            warmup_periods: 3,
            normal_window: 100_000_000,
            sampling_window: 10_000_000,
            repartition_period_ms: 500.0,
            gap_mode: GapMode::Literal,
            sensitive_rule: SensitiveRule::AllocationAtLeast,
        }
    }
}

impl LfocParams {
    pub fn low_threshold(&self) -> f64 {
        self.low_threshold_ratio * self.high_threshold
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |msg: String| Err(PolicyError::Params { line: 0, msg });
        let positive = [
            ("streaming_slowdown_lo", self.streaming_slowdown_lo),
            ("streaming_slowdown_hi", self.streaming_slowdown_hi),
            ("streaming_llcmpkc", self.streaming_llcmpkc),
            ("sensitive_slowdown", self.sensitive_slowdown),
            ("high_threshold", self.high_threshold),
            ("low_threshold_ratio", self.low_threshold_ratio),
            ("stall_threshold", self.stall_threshold),
            ("critical_slowdown", self.critical_slowdown),
            ("repartition_period_ms", self.repartition_period_ms),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let counts = [
            ("max_streaming_way", self.max_streaming_way as u64),
            ("gaps_per_streaming", self.gaps_per_streaming as u64),
            ("sensitive_min_ways", self.sensitive_min_ways as u64),
            ("history_len", self.history_len as u64),
            ("normal_window", self.normal_window),
            ("sampling_window", self.sampling_window),
        ];
        for (name, v) in counts {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Flat `key=value` rendering with every field spelled out.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let gap = match self.gap_mode {
            GapMode::Literal => "literal",
            GapMode::Capacity => "capacity",
        };
        let rule = match self.sensitive_rule {
            SensitiveRule::AllocationAtLeast => "allocation_at_least",
            SensitiveRule::DistinctWayCounts => "distinct_way_counts",
        };
        let _ = writeln!(out, "max_streaming_way={}", self.max_streaming_way);
        let _ = writeln!(out, "gaps_per_streaming={}", self.gaps_per_streaming);
        let _ = writeln!(out, "streaming_slowdown_lo={}", self.streaming_slowdown_lo);
        let _ = writeln!(out, "streaming_slowdown_hi={}", self.streaming_slowdown_hi);
        let _ = writeln!(out, "streaming_llcmpkc={}", self.streaming_llcmpkc);
        let _ = writeln!(out, "sensitive_slowdown={}", self.sensitive_slowdown);
        let _ = writeln!(out, "sensitive_min_ways={}", self.sensitive_min_ways);
        let _ = writeln!(out, "high_threshold={}", self.high_threshold);
        let _ = writeln!(out, "low_threshold_ratio={}", self.low_threshold_ratio);
        let _ = writeln!(out, "stall_threshold={}", self.stall_threshold);
        let _ = writeln!(out, "critical_slowdown={}", self.critical_slowdown);
        let _ = writeln!(out, "history_len={}", self.history_len);
        let _ = writeln!(out, "warmup_periods={}", self.warmup_periods);
        let _ = writeln!(out, "normal_window={}", self.normal_window);
        let _ = writeln!(out, "sampling_window={}", self.sampling_window);
        let _ = writeln!(out, "repartition_period_ms={}", self.repartition_period_ms);
        let _ = writeln!(out, "gap_mode={gap}");
        let _ = writeln!(out, "sensitive_rule={rule}");
        out
    }

    /// Parses a `key=value` file; keys left out keep their defaults.
    pub fn from_config_str(source: &str) -> Result<Self, PolicyError> {
        let mut p = LfocParams::default();
        for (i, raw) in source.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| PolicyError::Params { line: line_no, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let float = || {
                value
                    .parse::<f64>()
                    .map_err(|_| bad(format!("{key}: non-numeric value {value:?}")))
            };
            let count = || {
                value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| *v >= 0.0 && v.fract() == 0.0)
                    .map(|v| v as u64)
                    .ok_or_else(|| bad(format!("{key}: expected a non-negative integer, got {value:?}")))
            };
            match key {
                "max_streaming_way" => p.max_streaming_way = count()? as usize,
                "gaps_per_streaming" => p.gaps_per_streaming = count()? as usize,
                "streaming_slowdown_lo" => p.streaming_slowdown_lo = float()?,
                "streaming_slowdown_hi" => p.streaming_slowdown_hi = float()?,
                "streaming_llcmpkc" => p.streaming_llcmpkc = float()?,
                "sensitive_slowdown" => p.sensitive_slowdown = float()?,
                "sensitive_min_ways" => p.sensitive_min_ways = count()? as usize,
                "high_threshold" => p.high_threshold = float()?,
                "low_threshold_ratio" => p.low_threshold_ratio = float()?,
                "stall_threshold" => p.stall_threshold = float()?,
                "critical_slowdown" => p.critical_slowdown = float()?,
                "history_len" => p.history_len = count()? as usize,
                "warmup_periods" => p.warmup_periods = count()? as usize,
                "normal_window" => p.normal_window = count()?,
                "sampling_window" => p.sampling_window = count()?,
                "repartition_period_ms" => p.repartition_period_ms = float()?,
                "gap_mode" => {
                    p.gap_mode = match value {
                        "literal" => GapMode::Literal,
                        "capacity" => GapMode::Capacity,
                        other => return Err(bad(format!("unknown gap_mode {other:?}"))),
                    }
                }
                "sensitive_rule" => {
                    p.sensitive_rule = match value {
                        "allocation_at_least" => SensitiveRule::AllocationAtLeast,
                        "distinct_way_counts" => SensitiveRule::DistinctWayCounts,
                        other => return Err(bad(format!("unknown sensitive_rule {other:?}"))),
                    }
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        p.validate()?;
        Ok(p)
    }
}

/// Classifies from raw per-way tables (index `w - 1` = `w` ways).
pub fn classify_tables(slowdown: &[f64], llcmpkc: &[f64], params: &LfocParams) -> Result<AppClass, PolicyError> {
    if slowdown.is_empty() || slowdown.len() != llcmpkc.len() {
        return Err(PolicyError::IncompleteTables(format!(
            "slowdown has {} entries, llcmpkc {}",
            slowdown.len(),
            llcmpkc.len()
        )));
    }
    if slowdown.iter().chain(llcmpkc).any(|v| !v.is_finite()) {
        return Err(PolicyError::IncompleteTables("non-finite entry".into()));
    }
    let low_and_missy = slowdown
        .iter()
        .zip(llcmpkc)
        .any(|(&s, &m)| s <= params.streaming_slowdown_lo && m >= params.streaming_llcmpkc);
    let never_hurt = slowdown.iter().all(|&s| s < params.streaming_slowdown_hi);
    if low_and_missy && never_hurt {
        return Ok(AppClass::Streaming);
    }
    let sensitive = match params.sensitive_rule {
        SensitiveRule::AllocationAtLeast => slowdown
            .iter()
            .enumerate()
            .any(|(i, &s)| i + 1 >= params.sensitive_min_ways && s >= params.sensitive_slowdown),
        SensitiveRule::DistinctWayCounts => {
            slowdown.iter().filter(|&&s| s >= params.sensitive_slowdown).count() >= params.sensitive_min_ways
        }
    };
    Ok(if sensitive {
        AppClass::Sensitive
    } else {
        AppClass::LightSharing
    })
}

pub fn classify(profile: &AppProfile, params: &LfocParams) -> AppClass {
    classify_tables(profile.slowdown_table(), profile.llcmpkc(), params)
        .expect("profiles always carry complete tables")
}

fn table_value(table: &[f64], ways: usize) -> f64 {
    table[ways.min(table.len()) - 1]
}

/// UCP-style lookahead over slowdown tables.
///
/// Every app starts with one way. While ways remain, the app whose best block
/// of `d` extra ways yields the largest slowdown reduction per way receives
/// that block (ties: lower app index, then smaller block). Once no block
/// reduces any slowdown, leftover ways go one at a time to the app with the
/// highest current slowdown. Lookups past a table's end reuse its last entry.
pub fn lookahead(tables: &[Vec<f64>], budget: usize) -> Result<Vec<usize>, PolicyError> {
    let n = tables.len();
    if n == 0 || budget < n {
        return Err(PolicyError::Budget { budget, apps: n });
    }
    if let Some(t) = tables.iter().find(|t| t.is_empty()) {
        return Err(PolicyError::IncompleteTables(format!("empty slowdown table ({} entries)", t.len())));
    }
    let mut alloc = vec![1usize; n];
    let mut left = budget - n;
    while left > 0 {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, t) in tables.iter().enumerate() {
            let cur = table_value(t, alloc[i]);
            for d in 1..=left {
                let mu = (cur - table_value(t, alloc[i] + d)) / d as f64;
                if best.map_or(true, |(b, _, _)| mu > b) {
                    best = Some((mu, i, d));
                }
            }
        }
        let (mu, i, d) = best.expect("at least one candidate");
        if mu > 0.0 {
            alloc[i] += d;
            left -= d;
        } else {
            let mut target = 0;
            let mut worst = table_value(&tables[0], alloc[0]);
            for (j, t) in tables.iter().enumerate().skip(1) {
                let s = table_value(t, alloc[j]);
                if s > worst {
                    worst = s;
                    target = j;
                }
            }
            alloc[target] += 1;
            left -= 1;
        }
    }
    Ok(alloc)
}

/// Applications split by class. Sensitive apps carry the slowdown table that
/// lookahead will use.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassSets {
    pub streaming: Vec<usize>,
    pub sensitive: Vec<(usize, Vec<f64>)>,
    pub light: Vec<usize>,
}

impl ClassSets {
    pub fn from_workload(workload: &WorkloadSpec, params: &LfocParams) -> Self {
        let mut sets = ClassSets::default();
        for (i, p) in workload.apps.iter().enumerate() {
            match classify(p, params) {
                AppClass::Streaming => sets.streaming.push(i),
                AppClass::Sensitive => sets.sensitive.push((i, p.slowdown_table().to_vec())),
                _ => sets.light.push(i),
            }
        }
        sets
    }

    pub fn len(&self) -> usize {
        self.streaming.len() + self.sensitive.len() + self.light.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.streaming
            .iter()
            .copied()
            .chain(self.sensitive.iter().map(|(i, _)| *i))
            .chain(self.light.iter().copied())
    }
}

/// Ways reserved for streaming clusters: `ceil(|ST| / max_streaming_way)`
/// clamped to `[1, 2]`, and never so many that a sensitive app would be left
/// without a way.
pub fn ways_for_streaming(n_streaming: usize, n_sensitive: usize, nr_ways: usize, params: &LfocParams) -> usize {
    if n_streaming == 0 {
        return 0;
    }
    let wanted = n_streaming.div_ceil(params.max_streaming_way).clamp(1, 2);
    wanted.min(nr_ways.saturating_sub(n_sensitive)).max(1)
}

/// The LFOC cache-clustering algorithm.
///
/// Streaming apps are confined to at most two 1-way clusters, each sensitive
/// app gets its own cluster sized by lookahead over the remaining ways, and
/// light-sharing apps fill streaming clusters while capacity remains before
/// being dealt round-robin over the sensitive clusters. Clusters are returned
/// in creation order: streaming clusters first.
pub fn lfoc_partition(sets: &ClassSets, nr_ways: usize, params: &LfocParams) -> Result<ClusterAssignment, PolicyError> {
    if sets.is_empty() {
        return Err(PolicyError::Empty);
    }
    let mut seen = std::collections::BTreeSet::new();
    for a in sets.all() {
        if !seen.insert(a) {
            return Err(PolicyError::Overlap(a));
        }
    }
    if nr_ways == 0 {
        return Err(PolicyError::InfeasibleWays("cache has no ways".into()));
    }
    if sets.sensitive.is_empty() {
        let members = sets.streaming.iter().chain(&sets.light).copied().collect();
        return Ok(ClusterAssignment::new(vec![members], vec![nr_ways]));
    }
    let n_st = sets.streaming.len();
    let n_cs = sets.sensitive.len();
    let needed = n_cs + usize::from(n_st > 0);
    if nr_ways < needed {
        return Err(PolicyError::InfeasibleWays(format!(
            "{nr_ways} ways cannot host {n_cs} sensitive clusters{}",
            if n_st > 0 { " plus a streaming cluster" } else { "" }
        )));
    }

    let wfs = ways_for_streaming(n_st, n_cs, nr_ways, params);
    let mut clusters: Vec<Vec<usize>> = Vec::with_capacity(wfs + n_cs);
    let mut ways: Vec<usize> = Vec::with_capacity(wfs + n_cs);
    let r = if wfs > 0 { n_st.div_ceil(wfs) } else { 0 };
    let mut streaming = sets.streaming.iter().copied();
    for _ in 0..wfs {
        clusters.push(streaming.by_ref().take(r).collect());
        ways.push(1);
    }

    let tables: Vec<Vec<f64>> = sets.sensitive.iter().map(|(_, t)| t.clone()).collect();
    let alloc = lookahead(&tables, nr_ways - wfs)?;
    for ((app, _), w) in sets.sensitive.iter().zip(alloc) {
        clusters.push(vec![*app]);
        ways.push(w);
    }

    let mut light = sets.light.iter().copied().peekable();
    let mut idx = 0;
    while light.peek().is_some() && idx < wfs {
        let gaps = match params.gap_mode {
            GapMode::Literal => r as i64 - (clusters[idx].len() * params.gaps_per_streaming) as i64,
            GapMode::Capacity => {
                let st = clusters[idx].iter().filter(|a| sets.streaming.contains(a)).count();
                (st * params.gaps_per_streaming) as i64 - (clusters[idx].len() - st) as i64
            }
        };
        if gaps > 0 {
            let placed: Vec<usize> = light.by_ref().take(gaps as usize).collect();
            clusters[idx].extend(placed);
        }
        idx += 1;
    }
    let non_streaming = clusters.len() - wfs;
    for (i, app) in light.enumerate() {
        clusters[wfs + i % non_streaming].push(app);
    }
    Ok(ClusterAssignment::new(clusters, ways))
}

/// LFOC applied to the offline classification of a workload's profiles.
pub fn lfoc_assignment(workload: &WorkloadSpec, params: &LfocParams) -> Result<ClusterAssignment, PolicyError> {
    lfoc_partition(&ClassSets::from_workload(workload, params), workload.nr_ways(), params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// No partitioning: one cluster owning the whole cache.
    None,
    /// One singleton cluster per app with as-even-as-possible way counts.
    EqualPartition,
}

impl FromStr for BaselineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(BaselineKind::None),
            "equal_partition" | "equal" => Ok(BaselineKind::EqualPartition),
            other => Err(format!("unknown baseline {other:?}")),
        }
    }
}

pub fn baseline_assignment(n: usize, nr_ways: usize, kind: BaselineKind) -> Result<ClusterAssignment, PolicyError> {
    if n == 0 {
        return Err(PolicyError::Empty);
    }
    match kind {
        BaselineKind::None => Ok(ClusterAssignment::single(n, nr_ways)),
        BaselineKind::EqualPartition => {
            if n > nr_ways {
                return Err(PolicyError::InfeasibleWays(format!(
                    "{n} applications cannot each own one of {nr_ways} ways"
                )));
            }
            let base = nr_ways / n;
            let extra = nr_ways % n;
            let ways = (0..n).map(|i| base + usize::from(i < extra)).collect();
            Ok(ClusterAssignment::new((0..n).map(|i| vec![i]).collect(), ways))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(slowdown: &[f64], llc: f64) -> AppProfile {
        let ipc = slowdown.iter().map(|s| 1.0 / s).collect();
        AppProfile::new("p", ipc, vec![llc; slowdown.len()], vec![0.1; slowdown.len()], None).unwrap()
    }

    #[test]
    fn classification_examples() {
        let p = LfocParams::default();
        assert_eq!(classify(&profile(&[1.0; 11], 25.0), &p), AppClass::Streaming);
        let mut xalan = vec![1.0; 11];
        xalan[0] = 2.2;
        xalan[1] = 1.5;
        xalan[2] = 1.2;
        assert_eq!(classify(&profile(&xalan, 2.0), &p), AppClass::Sensitive);
        assert_eq!(classify(&profile(&[1.0; 11], 0.1), &p), AppClass::LightSharing);
    }

    #[test]
    fn one_way_slowdown_alone_is_not_sensitivity() {
        let p = LfocParams::default();
        let mut s = vec![1.0; 11];
        s[0] = 1.3;
        s[1] = 1.04;
        assert_eq!(classify(&profile(&s, 1.0), &p), AppClass::LightSharing);
        s[1] = 1.05;
        assert_eq!(classify(&profile(&s, 1.0), &p), AppClass::Sensitive);

        let alt = LfocParams {
            sensitive_rule: SensitiveRule::DistinctWayCounts,
            ..Default::default()
        };
        s[1] = 1.04;
        assert_eq!(classify(&profile(&s, 1.0), &alt), AppClass::LightSharing);
        s[1] = 1.05;
        assert_eq!(classify(&profile(&s, 1.0), &alt), AppClass::Sensitive);
    }

    #[test]
    fn streaming_needs_all_ways_below_hi() {
        let p = LfocParams::default();
        let mut s = vec![1.0; 11];
        s[0] = 1.06;
        // also sensitive? s[1] is 1.0, so falls to light sharing
        assert_eq!(classify(&profile(&s, 30.0), &p), AppClass::LightSharing);
        s[0] = 1.059;
        assert_eq!(classify(&profile(&s, 30.0), &p), AppClass::Streaming);
    }

    #[test]
    fn classify_tables_rejects_incomplete() {
        let p = LfocParams::default();
        assert!(classify_tables(&[1.0, 1.0], &[1.0], &p).is_err());
        assert!(classify_tables(&[], &[], &p).is_err());
    }

    #[test]
    fn lookahead_examples() {
        let convex: Vec<f64> = (1..=11).map(|w| 1.0 + 4.0 / (w * w) as f64).collect();
        assert_eq!(lookahead(&[convex.clone(), convex], 8).unwrap(), vec![4, 4]);

        let mut sens = vec![1.0; 11];
        sens[..3].copy_from_slice(&[2.0, 1.5, 1.1]);
        assert_eq!(lookahead(&[sens, vec![1.0; 11]], 6).unwrap(), vec![5, 1]);

        let t = vec![2.0, 1.0, 1.0];
        assert_eq!(lookahead(&[t.clone(), t.clone(), t.clone()], 3).unwrap(), vec![1, 1, 1]);
        assert!(matches!(lookahead(&[t.clone(), t], 1), Err(PolicyError::Budget { .. })));
    }

    #[test]
    fn lookahead_takes_blocks_over_plateaus() {
        // nothing gained from way 2, a cliff at 3: a block of two wins
        let cliff = vec![3.0, 3.0, 1.0, 1.0, 1.0, 1.0];
        let mild = vec![1.5, 1.2, 1.1, 1.0, 1.0, 1.0];
        assert_eq!(lookahead(&[mild, cliff], 6).unwrap(), vec![3, 3]);
    }

    #[test]
    fn lookahead_reads_past_table_end() {
        assert_eq!(lookahead(&[vec![2.0, 1.0]], 5).unwrap(), vec![5]);
    }

    #[test]
    fn no_sensitive_means_one_cluster() {
        let sets = ClassSets {
            streaming: vec![0, 1],
            sensitive: vec![],
            light: vec![2],
        };
        let a = lfoc_partition(&sets, 11, &LfocParams::default()).unwrap();
        assert_eq!(a, ClusterAssignment::new(vec![vec![0, 1, 2]], vec![11]));
    }

    #[test]
    fn one_streaming_one_sensitive() {
        let convex: Vec<f64> = (1..=11).map(|w| 1.0 + 2.0 / w as f64 - 2.0 / 11.0).collect();
        let sets = ClassSets {
            streaming: vec![0],
            sensitive: vec![(1, convex)],
            light: vec![],
        };
        let a = lfoc_partition(&sets, 11, &LfocParams::default()).unwrap();
        assert_eq!(a, ClusterAssignment::new(vec![vec![0], vec![1]], vec![1, 10]));
    }

    #[test]
    fn six_streaming_use_two_ways() {
        let convex: Vec<f64> = (1..=11).map(|w| 1.0 + 2.0 / w as f64).collect();
        let sets = ClassSets {
            streaming: (0..6).collect(),
            sensitive: vec![(6, convex)],
            light: vec![],
        };
        let a = lfoc_partition(&sets, 11, &LfocParams::default()).unwrap();
        assert_eq!(
            a,
            ClusterAssignment::new(vec![vec![0, 1, 2], vec![3, 4, 5], vec![6]], vec![1, 1, 9])
        );
    }

    #[test]
    fn light_sharing_placement_modes() {
        let t: Vec<f64> = (1..=11).map(|w| 1.0 + 1.0 / w as f64).collect();
        let sets = ClassSets {
            streaming: vec![0],
            sensitive: vec![(1, t.clone()), (2, t)],
            light: vec![3, 4, 5, 6, 7],
        };
        let literal = lfoc_partition(&sets, 11, &LfocParams::default()).unwrap();
        assert_eq!(literal.clusters[0], vec![0]);
        assert_eq!(literal.clusters[1], vec![1, 3, 5, 7]);
        assert_eq!(literal.clusters[2], vec![2, 4, 6]);

        let capacity = LfocParams {
            gap_mode: GapMode::Capacity,
            ..Default::default()
        };
        let a = lfoc_partition(&sets, 11, &capacity).unwrap();
        assert_eq!(a.clusters[0], vec![0, 3, 4, 5]);
        assert_eq!(a.clusters[1], vec![1, 6]);
        assert_eq!(a.clusters[2], vec![2, 7]);
        a.validate(8, 11).unwrap();
    }

    #[test]
    fn no_streaming_gives_lookahead_everything() {
        let t: Vec<f64> = (1..=8).map(|w| 1.0 + 1.0 / w as f64).collect();
        let sets = ClassSets {
            streaming: vec![],
            sensitive: vec![(0, t.clone()), (1, t)],
            light: vec![2],
        };
        let a = lfoc_partition(&sets, 8, &LfocParams::default()).unwrap();
        assert_eq!(a.ways.iter().sum::<usize>(), 8);
        assert_eq!(a.ways, vec![4, 4]);
        assert_eq!(a.clusters, vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn streaming_ways_shrink_to_fit_sensitive_apps() {
        let t = vec![2.0, 1.0, 1.0, 1.0];
        let sets = ClassSets {
            streaming: (0..6).collect(),
            sensitive: vec![(6, t.clone()), (7, t.clone()), (8, t)],
            light: vec![],
        };
        let a = lfoc_partition(&sets, 4, &LfocParams::default()).unwrap();
        assert_eq!(a.ways, vec![1, 1, 1, 1]);
        assert_eq!(a.clusters[0].len(), 6);
        a.validate(9, 4).unwrap();
    }

    #[test]
    fn partition_errors() {
        let t = vec![2.0, 1.0];
        let p = LfocParams::default();
        assert_eq!(lfoc_partition(&ClassSets::default(), 11, &p), Err(PolicyError::Empty));
        let overlap = ClassSets {
            streaming: vec![0],
            sensitive: vec![(0, t.clone())],
            light: vec![],
        };
        assert_eq!(lfoc_partition(&overlap, 11, &p), Err(PolicyError::Overlap(0)));
        let crowded = ClassSets {
            streaming: vec![0],
            sensitive: vec![(1, t.clone()), (2, t)],
            light: vec![],
        };
        assert!(matches!(lfoc_partition(&crowded, 2, &p), Err(PolicyError::InfeasibleWays(_))));
    }

    #[test]
    fn baselines() {
        assert_eq!(
            baseline_assignment(3, 11, BaselineKind::None).unwrap(),
            ClusterAssignment::single(3, 11)
        );
        let eq = baseline_assignment(4, 11, BaselineKind::EqualPartition).unwrap();
        assert_eq!(eq.ways, vec![3, 3, 3, 2]);
        assert!(baseline_assignment(12, 11, BaselineKind::EqualPartition).is_err());
    }

    #[test]
    fn params_file_roundtrip() {
        let p = LfocParams {
            gap_mode: GapMode::Capacity,
            high_threshold: 12.5,
            ..Default::default()
        };
        assert_eq!(LfocParams::from_config_str(&p.to_config_string()).unwrap(), p);
        assert_eq!(LfocParams::from_config_str("# nothing\n").unwrap(), LfocParams::default());
        assert!((LfocParams::default().low_threshold() - 3.0).abs() < 1e-12);
        assert!(LfocParams::from_config_str("history_len=0").is_err());
        assert!(LfocParams::from_config_str("nope=1").is_err());
        assert!(LfocParams::from_config_str("normal_window=1e8").unwrap().normal_window == 100_000_000);
    }
}
