//! Seeded workload generation, policy-by-workload experiment grids and report
//! rendering.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynsim::{run_simulation, SimConfig, SimPolicy};
use crate::metrics::{evaluate, BandwidthModel, ClusterAssignment};
use crate::optimal::{self, Objective, SearchMode, Strategy};
use crate::policies::{baseline_assignment, classify, lfoc_assignment, AppClass, BaselineKind, LfocParams};
use crate::profiles::{AppProfile, CacheConfig, TraceWorkload, WorkloadFile, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("no {0} profile in the pool")]
    EmptyClass(AppClass),
    #[error("class mix adds up to {mix} applications, expected {n}")]
    MixMismatch { mix: usize, n: usize },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("workload {workload}, policy {policy}: {message}")]
    Cell {
        workload: String,
        policy: SimPolicy,
        message: String,
    },
    #[error("report: {0}")]
    Report(String),
}

/// Number of applications wanted from each class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMix {
    pub streaming: usize,
    pub sensitive: usize,
    pub light: usize,
}

impl ClassMix {
    pub fn total(&self) -> usize {
        self.streaming + self.sensitive + self.light
    }
}

impl FromStr for ClassMix {
    type Err = String;
    /// `streaming,sensitive,light`, e.g. `2,3,3`.
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("class mix must be three counts like 2,3,3, got {s:?}"))?;
        match parts[..] {
            [streaming, sensitive, light] => Ok(ClassMix {
                streaming,
                sensitive,
                light,
            }),
            _ => Err(format!("class mix must be three counts like 2,3,3, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedWorkload {
    pub file: WorkloadFile,
    pub spec: WorkloadSpec,
    /// Instances of each benchmark, by name.
    pub instances: BTreeMap<String, usize>,
}

/// Draws `mix` applications from `pool`, with replacement inside each class.
/// Apps are listed streaming first, then sensitive, then light-sharing.
pub fn gen_workload(
    pool: &[AppProfile],
    cache: &CacheConfig,
    n_apps: usize,
    mix: ClassMix,
    seed: u64,
    params: &LfocParams,
) -> Result<GeneratedWorkload, ExperimentError> {
    if mix.total() != n_apps {
        return Err(ExperimentError::MixMismatch { mix: mix.total(), n: n_apps });
    }
    if n_apps == 0 {
        return Err(ExperimentError::Invalid("a workload needs at least one application".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut apps = Vec::with_capacity(n_apps);
    for (class, count) in [
        (AppClass::Streaming, mix.streaming),
        (AppClass::Sensitive, mix.sensitive),
        (AppClass::LightSharing, mix.light),
    ] {
        if count == 0 {
            continue;
        }
        let bucket: Vec<&AppProfile> = pool.iter().filter(|p| classify(p, params) == class).collect();
        if bucket.is_empty() {
            return Err(ExperimentError::EmptyClass(class));
        }
        for _ in 0..count {
            apps.push(bucket[rng.gen_range(0..bucket.len())].clone());
        }
    }
    let mut instances = BTreeMap::new();
    for a in &apps {
        *instances.entry(a.name().to_string()).or_insert(0) += 1;
    }
    let file = WorkloadFile {
        apps: apps.iter().map(|a| a.name().to_string()).collect(),
        cache: cache.clone(),
        total_instr: None,
        comments: vec![format!(
            "seed={seed} mix={},{},{}",
            mix.streaming, mix.sensitive, mix.light
        )],
    };
    let spec = WorkloadSpec::new(apps, cache.clone()).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    Ok(GeneratedWorkload { file, spec, instances })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    Static,
    Dynamic,
}

impl FromStr for ExperimentMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "static" => Ok(ExperimentMode::Static),
            "dynamic" => Ok(ExperimentMode::Dynamic),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedWorkload {
    pub id: String,
    pub spec: WorkloadSpec,
    /// Required in dynamic mode.
    pub traces: Option<TraceWorkload>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub workloads: Vec<NamedWorkload>,
    pub policies: Vec<SimPolicy>,
    pub mode: ExperimentMode,
    pub seed: u64,
    pub params: LfocParams,
    pub bandwidth: BandwidthModel,
    pub sim: SimConfig,
    /// Policy every row is normalized against.
    pub baseline: SimPolicy,
}

impl ExperimentSpec {
    pub fn new(workloads: Vec<NamedWorkload>, policies: Vec<SimPolicy>, mode: ExperimentMode, seed: u64) -> Self {
        ExperimentSpec {
            workloads,
            policies,
            mode,
            seed,
            params: LfocParams::default(),
            bandwidth: BandwidthModel::Off,
            sim: SimConfig::default(),
            baseline: SimPolicy::None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.workloads.is_empty() {
            return Err(ExperimentError::Invalid("no workloads".into()));
        }
        if self.policies.is_empty() {
            return Err(ExperimentError::Invalid("no policies".into()));
        }
        if self.mode == ExperimentMode::Dynamic {
            if let Some(w) = self.workloads.iter().find(|w| w.traces.is_none()) {
                return Err(ExperimentError::Invalid(format!(
                    "dynamic mode needs phase traces for workload {}",
                    w.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub workload: String,
    pub policy: SimPolicy,
    pub unfairness: f64,
    pub stp: f64,
    pub normalized_unfairness: f64,
    pub normalized_stp: f64,
    pub wall_time_ms: f64,
    pub algorithm_invocations: u64,
}

/// CSV header, matching the field order of [`ReportRow`].
pub const REPORT_COLUMNS: [&str; 8] = [
    "workload",
    "policy",
    "unfairness",
    "stp",
    "normalized_unfairness",
    "normalized_stp",
    "wall_time_ms",
    "algorithm_invocations",
];

struct CellResult {
    unfairness: f64,
    stp: f64,
    wall_time_ms: f64,
    invocations: u64,
}

/// Static assignment a policy picks for `spec`, with its invocation count.
pub fn static_assignment(
    spec: &WorkloadSpec,
    policy: SimPolicy,
    params: &LfocParams,
    bandwidth: BandwidthModel,
) -> Result<(ClusterAssignment, u64), String> {
    let n = spec.len();
    let k = spec.nr_ways();
    let solve = |mode| {
        optimal::solve_with(
            spec,
            &optimal::SolveOptions {
                objective: Objective::Fairness,
                mode,
                strategy: Strategy::BranchAndBound,
                bandwidth,
                ..Default::default()
            },
        )
        .map(|s| (s.assignment, 1))
        .map_err(|e| e.to_string())
    };
    match policy {
        SimPolicy::Lfoc => lfoc_assignment(spec, params).map(|a| (a, 1)).map_err(|e| e.to_string()),
        SimPolicy::None => baseline_assignment(n, k, BaselineKind::None)
            .map(|a| (a, 0))
            .map_err(|e| e.to_string()),
        SimPolicy::EqualPartition => baseline_assignment(n, k, BaselineKind::EqualPartition)
            .map(|a| (a, 0))
            .map_err(|e| e.to_string()),
        SimPolicy::BestStaticOracle => solve(SearchMode::Clustering),
        SimPolicy::OptimalPartitioningOracle => solve(SearchMode::Partitioning),
    }
}

fn run_cell(spec: &ExperimentSpec, w: &NamedWorkload, policy: SimPolicy) -> Result<CellResult, ExperimentError> {
    let start = Instant::now();
    let tag = |message: String| ExperimentError::Cell {
        workload: w.id.clone(),
        policy,
        message,
    };
    let (unfairness, stp, invocations) = match spec.mode {
        ExperimentMode::Static => {
            let (a, inv) = static_assignment(&w.spec, policy, &spec.params, spec.bandwidth).map_err(tag)?;
            let r = evaluate(&a, &w.spec, spec.bandwidth).map_err(|e| tag(e.to_string()))?;
            (r.unfairness, r.stp, inv)
        }
        ExperimentMode::Dynamic => {
            let traces = w.traces.as_ref().expect("validated");
            let cfg = SimConfig {
                params: spec.params.clone(),
                bandwidth: spec.bandwidth,
                ..spec.sim.clone()
            };
            let r = run_simulation(traces, policy, &cfg, spec.seed).map_err(|e| tag(e.to_string()))?;
            (r.unfairness, r.stp, r.partition_invocations)
        }
    };
    Ok(CellResult {
        unfairness,
        stp,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        invocations,
    })
}

/// Runs every requested policy on every workload, plus the baseline policy
/// when it was not requested, and normalizes each row against the baseline
/// on the same workload. Rows come out workload-major in request order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ReportRow>, ExperimentError> {
    spec.validate()?;
    let mut policies = spec.policies.clone();
    if !policies.contains(&spec.baseline) {
        policies.push(spec.baseline);
    }
    let cells: Vec<(usize, SimPolicy)> = (0..spec.workloads.len())
        .flat_map(|w| policies.iter().map(move |&p| (w, p)))
        .collect();
    let results: Vec<Result<CellResult, ExperimentError>> = cells
        .par_iter()
        .map(|&(w, p)| run_cell(spec, &spec.workloads[w], p))
        .collect();
    let results: Vec<CellResult> = results.into_iter().collect::<Result<_, _>>()?;
    let per_workload = policies.len();
    let base_idx = policies.iter().position(|&p| p == spec.baseline).expect("added above");
    let mut rows = Vec::new();
    for (w, chunk) in results.chunks(per_workload).enumerate() {
        let base = &chunk[base_idx];
        for (&policy, r) in policies.iter().zip(chunk) {
            if !spec.policies.contains(&policy) {
                continue;
            }
            rows.push(ReportRow {
                workload: spec.workloads[w].id.clone(),
                policy,
                unfairness: r.unfairness,
                stp: r.stp,
                normalized_unfairness: r.unfairness / base.unfairness,
                normalized_stp: r.stp / base.stp,
                wall_time_ms: r.wall_time_ms,
                algorithm_invocations: r.invocations,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Plotdata,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "plotdata" => Ok(ReportFormat::Plotdata),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub policy: SimPolicy,
    pub normalized_unfairness: f64,
    pub normalized_stp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotGroup {
    pub workload: String,
    pub series: Vec<PlotSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub groups: Vec<PlotGroup>,
}

/// Grouped bars: one group per workload in first-seen order, one series per
/// policy in row order.
pub fn plot_data(rows: &[ReportRow]) -> PlotData {
    let mut groups: Vec<PlotGroup> = Vec::new();
    for r in rows {
        let series = PlotSeries {
            policy: r.policy,
            normalized_unfairness: r.normalized_unfairness,
            normalized_stp: r.normalized_stp,
        };
        match groups.iter_mut().find(|g| g.workload == r.workload) {
            Some(g) => g.series.push(series),
            None => groups.push(PlotGroup {
                workload: r.workload.clone(),
                series: vec![series],
            }),
        }
    }
    PlotData { groups }
}

pub fn report(rows: &[ReportRow], format: ReportFormat) -> Result<String, ExperimentError> {
    let err = |e: &dyn std::fmt::Display| ExperimentError::Report(e.to_string());
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(rows).map_err(|e| err(&e)),
        ReportFormat::Plotdata => serde_json::to_string_pretty(&plot_data(rows)).map_err(|e| err(&e)),
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(REPORT_COLUMNS).map_err(|e| err(&e))?;
            for r in rows {
                w.serialize(r).map_err(|e| err(&e))?;
            }
            let bytes = w.into_inner().map_err(|e| err(&e))?;
            String::from_utf8(bytes).map_err(|e| err(&e))
        }
    }
}

/// Parses rows previously written as JSON or CSV.
pub fn parse_rows(source: &str) -> Result<Vec<ReportRow>, ExperimentError> {
    let err = |e: &dyn std::fmt::Display| ExperimentError::Report(e.to_string());
    let trimmed = source.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| err(&e));
    }
    let mut r = csv::Reader::from_reader(source.as_bytes());
    r.deserialize().collect::<Result<Vec<ReportRow>, _>>().map_err(|e| err(&e))
}
