//! Discrete-time simulation of LFOC running online: warm-up, per-app sampling
//! sweeps with early stop, phase-change detection from monitoring windows and
//! periodic repartitioning, plus static policies for comparison.
//!
//! Time advances in fixed ticks. Inside a tick every app progresses at the
//! rate implied by its current segment and effective ways; progress is split
//! exactly at segment ends, run completions and monitoring-window ends, so
//! samples and completion times do not depend on the tick length.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, share_ways, BandwidthModel, ClusterAssignment, FeasibilityError, MetricsError};
use crate::optimal::{self, Objective, SearchMode, SolveError, Strategy};
use crate::policies::{
    baseline_assignment, classify_tables, lfoc_partition, AppClass, BaselineKind, ClassSets, LfocParams, PolicyError,
};
use crate::profiles::{AppProfile, TraceWorkload};

/// Below this many instructions a counter is considered to have reached its
/// boundary; absorbs float drift on positions of up to ~1e12.
const EPS_INSTR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("policy failed at {time_ms} ms: {source}")]
    Policy { time_ms: f64, source: PolicyError },
    #[error("solver: {0}")]
    Solve(#[from] SolveError),
    #[error("infeasible assignment at {time_ms} ms: {source}")]
    Feasibility { time_ms: f64, source: FeasibilityError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("simulation exceeded {0} ms without reaching the completion target")]
    Timeout(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "ways")]
pub enum Mode {
    /// Initial monitoring periods whose samples are discarded.
    Warmup,
    /// Queued for a sampling sweep.
    Waiting,
    /// Running a sweep; the payload is the current sampling partition size.
    Sampling(usize),
    Normal,
}

/// What LFOC knows about one application while it runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AppRuntimeState {
    pub class: AppClass,
    pub instructions_retired: f64,
    pub completions: usize,
    /// Last `history_len` (llcmpkc, stall_frac) samples from normal mode.
    pub history: VecDeque<(f64, f64)>,
    pub slowdown_table_estimate: Vec<f64>,
    /// Defined only for sensitive apps.
    pub critical_size: Option<usize>,
    pub mode: Mode,
    pub warmup_left: usize,
}

impl AppRuntimeState {
    pub fn new(params: &LfocParams) -> Self {
        AppRuntimeState {
            class: AppClass::Unknown,
            instructions_retired: 0.0,
            completions: 0,
            history: VecDeque::with_capacity(params.history_len),
            slowdown_table_estimate: Vec::new(),
            critical_size: None,
            mode: if params.warmup_periods > 0 { Mode::Warmup } else { Mode::Waiting },
            warmup_left: params.warmup_periods,
        }
    }

    pub fn push_sample(&mut self, llcmpkc: f64, stall_frac: f64, params: &LfocParams) {
        if self.history.len() == params.history_len {
            self.history.pop_front();
        }
        self.history.push_back((llcmpkc, stall_frac));
    }

    pub fn history_full(&self, params: &LfocParams) -> bool {
        self.history.len() >= params.history_len
    }

    pub fn mean_llcmpkc(&self) -> f64 {
        self.history.iter().map(|h| h.0).sum::<f64>() / self.history.len().max(1) as f64
    }

    pub fn mean_stall(&self) -> f64 {
        self.history.iter().map(|h| h.1).sum::<f64>() / self.history.len().max(1) as f64
    }
}

/// Whether the averaged history no longer fits the app's class. Requires a
/// full history; returns false otherwise.
pub fn detect_class_change(state: &AppRuntimeState, effective_ways: f64, params: &LfocParams) -> bool {
    if !state.history_full(params) {
        return false;
    }
    let llc = state.mean_llcmpkc();
    let memory_intensive = llc >= params.high_threshold || state.mean_stall() > params.stall_threshold;
    match state.class {
        AppClass::LightSharing => memory_intensive,
        AppClass::Streaming => llc < params.low_threshold(),
        AppClass::Sensitive => {
            let critical = state.critical_size.map_or(0.0, |c| c as f64);
            (!memory_intensive && effective_ways < critical) || (llc > params.high_threshold && effective_ways > critical)
        }
        AppClass::Unknown => false,
    }
}

/// One monitoring-window reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub ipc: f64,
    pub llcmpkc: f64,
}

/// Progress of a sampling sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepState {
    /// Size of the sampling partition being measured.
    pub ways: usize,
    /// Largest size the sweep may reach.
    pub max_ways: usize,
    /// Length of the table to produce.
    pub nr_ways: usize,
    pub ipc: Vec<f64>,
    pub llcmpkc: Vec<f64>,
    /// Disables both early-stop rules.
    pub full_sweep: bool,
}

impl SweepState {
    pub fn new(max_ways: usize, nr_ways: usize, full_sweep: bool) -> Self {
        SweepState {
            ways: 1,
            max_ways: max_ways.clamp(1, nr_ways),
            nr_ways,
            ipc: Vec::with_capacity(nr_ways),
            llcmpkc: Vec::with_capacity(nr_ways),
            full_sweep,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub class: AppClass,
    pub slowdown_table: Vec<f64>,
    pub ipc_table: Vec<f64>,
    pub llcmpkc_table: Vec<f64>,
    pub critical_size: Option<usize>,
    /// Way counts actually measured.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepStep {
    Next(SweepState),
    Finished(SweepOutcome),
}

fn slowdowns_from_ipc(ipc: &[f64]) -> Vec<f64> {
    let top = ipc[ipc.len() - 1];
    ipc.iter().map(|&v| (top / v).max(1.0)).collect()
}

fn extend_flat(v: &mut Vec<f64>, len: usize) {
    let last = *v.last().expect("non-empty");
    v.resize(len, last);
}

fn finish(ipc: Vec<f64>, llc: Vec<f64>, steps: usize, params: &LfocParams) -> SweepOutcome {
    let slowdown = slowdowns_from_ipc(&ipc);
    let class = classify_tables(&slowdown, &llc, params).expect("sweep tables are complete");
    let critical_size = (class == AppClass::Sensitive).then(|| {
        slowdown
            .iter()
            .position(|&s| s < params.critical_slowdown)
            .map_or(slowdown.len(), |i| i + 1)
    });
    SweepOutcome {
        class,
        slowdown_table: slowdown,
        ipc_table: ipc,
        llcmpkc_table: llc,
        critical_size,
        steps,
    }
}

/// Feeds the reading taken at `state.ways` into the sweep.
///
/// The sweep ends early when misses drop below the low threshold (the rest of
/// the table repeats the last IPC sample), or when IPC grew by less than the
/// streaming slowdown threshold over the last added way and a projection of
/// that growth up to `max_ways` already classifies as streaming. Otherwise it
/// advances one way until `max_ways`. Entries past `max_ways` repeat the last
/// one.
pub fn sampling_sweep_step(mut state: SweepState, measured: Measurement, params: &LfocParams) -> SweepStep {
    state.ipc.push(measured.ipc);
    state.llcmpkc.push(measured.llcmpkc);
    let steps = state.ipc.len();
    let k = state.nr_ways;
    if !state.full_sweep && measured.llcmpkc < params.low_threshold() {
        let (mut ipc, mut llc) = (state.ipc, state.llcmpkc);
        extend_flat(&mut ipc, k);
        extend_flat(&mut llc, k);
        return SweepStep::Finished(finish(ipc, llc, steps, params));
    }
    if !state.full_sweep && steps >= 2 {
        let growth = state.ipc[steps - 1] / state.ipc[steps - 2];
        if growth < params.streaming_slowdown_lo {
            let mut ipc = state.ipc.clone();
            let mut llc = state.llcmpkc.clone();
            let g = growth.max(1.0);
            while ipc.len() < state.max_ways {
                let next = ipc[ipc.len() - 1] * g;
                ipc.push(next);
            }
            extend_flat(&mut ipc, k);
            extend_flat(&mut llc, k);
            let projected = slowdowns_from_ipc(&ipc);
            if classify_tables(&projected, &llc, params) == Ok(AppClass::Streaming) {
                return SweepStep::Finished(finish(ipc, llc, steps, params));
            }
        }
    }
    if state.ways >= state.max_ways {
        let (mut ipc, mut llc) = (state.ipc, state.llcmpkc);
        extend_flat(&mut ipc, k);
        extend_flat(&mut llc, k);
        return SweepStep::Finished(finish(ipc, llc, steps, params));
    }
    state.ways += 1;
    SweepStep::Next(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimPolicy {
    Lfoc,
    None,
    EqualPartition,
    /// Fairness-optimal clustering of the trace-averaged profiles, fixed.
    #[serde(rename = "best_static")]
    BestStaticOracle,
    /// Fairness-optimal strict partitioning of the trace-averaged profiles, fixed.
    #[serde(rename = "optimal_partitioning")]
    OptimalPartitioningOracle,
}

impl FromStr for SimPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lfoc" => Ok(SimPolicy::Lfoc),
            "none" => Ok(SimPolicy::None),
            "equal_partition" => Ok(SimPolicy::EqualPartition),
            "best_static" | "best_static_oracle" => Ok(SimPolicy::BestStaticOracle),
            "optimal_partitioning" | "optimal_partitioning_oracle" => Ok(SimPolicy::OptimalPartitioningOracle),
            other => Err(format!("unknown policy {other:?}")),
        }
    }
}

impl fmt::Display for SimPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimPolicy::Lfoc => "lfoc",
            SimPolicy::None => "none",
            SimPolicy::EqualPartition => "equal_partition",
            SimPolicy::BestStaticOracle => "best_static",
            SimPolicy::OptimalPartitioningOracle => "optimal_partitioning",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub tick_ms: f64,
    pub params: LfocParams,
    pub completions_target: usize,
    pub bandwidth: BandwidthModel,
    /// Force every sweep to measure all way counts.
    pub full_sweep: bool,
    /// Arithmetic instead of geometric mean of completion times.
    pub arithmetic_mean: bool,
    /// Relative amplitude of uniform noise applied to measurements.
    pub noise: f64,
    pub record_samples: bool,
    /// Log model unfairness and STP once per repartition period.
    pub log_periods: bool,
    pub max_time_ms: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tick_ms: 1.0,
            params: LfocParams::default(),
            completions_target: 3,
            bandwidth: BandwidthModel::Off,
            full_sweep: false,
            arithmetic_mean: false,
            noise: 0.0,
            record_samples: false,
            log_periods: false,
            max_time_ms: 3.6e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Warmup,
    Normal,
    Sampling,
    /// Taken while queued for sampling; ignored.
    Waiting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub time_ms: f64,
    pub app: usize,
    pub kind: SampleKind,
    /// Position inside the current run when the window closed.
    pub run_instructions: f64,
    pub ipc: f64,
    pub llcmpkc: f64,
    pub stall_frac: f64,
    pub effective_ways: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTransition {
    pub tick: u64,
    pub time_ms: f64,
    pub app: usize,
    pub from: AppClass,
    pub to: AppClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentChange {
    pub tick: u64,
    pub time_ms: f64,
    pub assignment: ClusterAssignment,
}

/// A detected class change that sent an app back to sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSignal {
    pub tick: u64,
    pub time_ms: f64,
    pub app: usize,
    pub class: AppClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub tick: u64,
    pub unfairness: f64,
    pub stp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppReport {
    pub name: String,
    pub completion_times_ms: Vec<f64>,
    pub mean_completion_ms: f64,
    pub solo_ms: f64,
    pub slowdown: f64,
    pub final_class: AppClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: SimPolicy,
    pub seed: u64,
    pub apps: Vec<AppReport>,
    pub unfairness: f64,
    pub stp: f64,
    pub sim_time_ms: f64,
    pub ticks: u64,
    pub class_transitions: Vec<ClassTransition>,
    pub assignment_log: Vec<AssignmentChange>,
    pub signals: Vec<ChangeSignal>,
    pub periods: Vec<PeriodRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub samples: Vec<SampleRecord>,
    /// Invocations of the partitioning algorithm.
    pub partition_invocations: u64,
    /// Way counts measured by sampling sweeps.
    pub sweep_steps: u64,
}

impl SimReport {
    pub fn slowdowns(&self) -> Vec<f64> {
        self.apps.iter().map(|a| a.slowdown).collect()
    }
}

/// Per-app progress and window accumulators.
#[derive(Debug, Clone)]
struct Runner {
    seg: usize,
    seg_pos: f64,
    run_pos: f64,
    run_start_ms: f64,
    completion_times: Vec<f64>,
    win_instr: f64,
    win_cycles: f64,
    win_misses: f64,
    win_stall: f64,
    effective: f64,
    rate: f64,
}

struct Engine<'a> {
    workload: &'a TraceWorkload,
    policy: SimPolicy,
    cfg: &'a SimConfig,
    params: &'a LfocParams,
    rng: ChaCha8Rng,
    n: usize,
    k: usize,
    now: f64,
    tick: u64,
    apps: Vec<AppRuntimeState>,
    run: Vec<Runner>,
    assignment: ClusterAssignment,
    dirty: bool,
    queue: VecDeque<usize>,
    sampler: Option<(usize, SweepState)>,
    report: SimReport,
}

impl<'a> Engine<'a> {
    fn new(
        workload: &'a TraceWorkload,
        policy: SimPolicy,
        cfg: &'a SimConfig,
        seed: u64,
        initial: ClusterAssignment,
    ) -> Self {
        let n = workload.traces.len();
        let params = &cfg.params;
        let runner = Runner {
            seg: 0,
            seg_pos: 0.0,
            run_pos: 0.0,
            run_start_ms: 0.0,
            completion_times: Vec::new(),
            win_instr: 0.0,
            win_cycles: 0.0,
            win_misses: 0.0,
            win_stall: 0.0,
            effective: 0.0,
            rate: 0.0,
        };
        Engine {
            workload,
            policy,
            cfg,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            n,
            k: workload.cache.nr_ways,
            now: 0.0,
            tick: 0,
            apps: vec![AppRuntimeState::new(params); n],
            run: vec![runner; n],
            assignment: initial.clone(),
            dirty: true,
            queue: VecDeque::new(),
            sampler: None,
            report: SimReport {
                policy,
                seed,
                apps: Vec::new(),
                unfairness: 1.0,
                stp: 0.0,
                sim_time_ms: 0.0,
                ticks: 0,
                class_transitions: Vec::new(),
                assignment_log: vec![AssignmentChange {
                    tick: 0,
                    time_ms: 0.0,
                    assignment: initial,
                }],
                signals: Vec::new(),
                periods: Vec::new(),
                samples: Vec::new(),
                partition_invocations: 0,
                sweep_steps: 0,
            },
        }
    }

    fn profile(&self, app: usize) -> &'a AppProfile {
        &self.workload.traces[app].segments()[self.run[app].seg].profile
    }

    /// Recomputes effective ways and retirement rates after any change of
    /// assignment or segment.
    fn refresh(&mut self) {
        if !self.dirty {
            return;
        }
        let mut raw = vec![0.0; self.n];
        let mut eff = vec![0.0; self.n];
        for (c, &w) in self.assignment.clusters.iter().zip(&self.assignment.ways) {
            let profiles: Vec<&AppProfile> = c.iter().map(|&a| self.profile(a)).collect();
            let (e, _) = share_ways(&profiles, w);
            for ((&a, p), ei) in c.iter().zip(&profiles).zip(e) {
                eff[a] = ei;
                raw[a] = p.slowdown_clamped(ei);
            }
        }
        let factor = match self.cfg.bandwidth {
            BandwidthModel::Off => 1.0,
            BandwidthModel::Linear => metrics::bandwidth_factor(
                (0..self.n).map(|a| (self.profile(a), eff[a])),
                self.workload.cache.peak_bandwidth.expect("checked"),
            ),
        };
        let per_ms = self.workload.cache.clock_hz / 1e3;
        for a in 0..self.n {
            let ipc = self.profile(a).ipc_alone() / (raw[a] * factor);
            self.run[a].effective = eff[a];
            self.run[a].rate = ipc * per_ms;
        }
        self.dirty = false;
    }

    fn window_target(&self, app: usize) -> f64 {
        match self.apps[app].mode {
            Mode::Sampling(_) => self.params.sampling_window as f64,
            _ => self.params.normal_window as f64,
        }
    }

    fn remaining(&self, app: usize) -> f64 {
        let r = &self.run[app];
        let trace = &self.workload.traces[app];
        let seg_left = trace.segments()[r.seg].duration_instr as f64 - r.seg_pos;
        let run_left = trace.total_instructions() as f64 - r.run_pos;
        let win_left = self.window_target(app) - r.win_instr;
        seg_left.min(run_left).min(win_left).max(0.0)
    }

    fn advance(&mut self, dt: f64) {
        let cycles = dt * self.workload.cache.clock_hz / 1e3;
        for a in 0..self.n {
            let p = self.profile(a);
            let r = &mut self.run[a];
            let instr = r.rate * dt;
            let e = r.effective;
            r.seg_pos += instr;
            r.run_pos += instr;
            r.win_instr += instr;
            r.win_cycles += cycles;
            r.win_misses += p.metric_clamped(p.llcmpkc(), e) * instr / 1e3;
            r.win_stall += p.metric_clamped(p.stall_frac(), e) * cycles;
            self.apps[a].instructions_retired += instr;
        }
        self.now += dt;
    }

    fn done(&self) -> bool {
        self.apps.iter().all(|s| s.completions >= self.cfg.completions_target)
    }

    fn enforce(&mut self, assignment: ClusterAssignment) -> Result<(), SimError> {
        assignment.validate(self.n, self.k).map_err(|source| SimError::Feasibility {
            time_ms: self.now,
            source,
        })?;
        if assignment.canonical() != self.assignment.canonical() {
            self.report.assignment_log.push(AssignmentChange {
                tick: self.tick,
                time_ms: self.now,
                assignment: assignment.clone(),
            });
            self.assignment = assignment;
            self.dirty = true;
        }
        Ok(())
    }

    fn sampling_layout(&self, sampler: usize, ways: usize) -> ClusterAssignment {
        let rest: Vec<usize> = (0..self.n).filter(|&a| a != sampler).collect();
        if rest.is_empty() {
            return ClusterAssignment::new(vec![vec![sampler]], vec![self.k]);
        }
        ClusterAssignment::new(vec![vec![sampler], rest], vec![ways, self.k - ways])
    }

    fn reset_window(&mut self, app: usize) {
        let r = &mut self.run[app];
        r.win_instr = 0.0;
        r.win_cycles = 0.0;
        r.win_misses = 0.0;
        r.win_stall = 0.0;
    }

    fn start_next_sampling(&mut self) -> Result<(), SimError> {
        while let Some(app) = self.queue.pop_front() {
            if self.apps[app].mode != Mode::Waiting {
                continue;
            }
            let sweep = SweepState::new(self.k - 1, self.k, self.cfg.full_sweep);
            self.apps[app].mode = Mode::Sampling(sweep.ways);
            self.reset_window(app);
            let layout = self.sampling_layout(app, sweep.ways);
            self.sampler = Some((app, sweep));
            return self.enforce(layout);
        }
        self.repartition()
    }

    fn enqueue(&mut self, app: usize) -> Result<(), SimError> {
        if self.n == 1 {
            // no complementary partition to sample against
            self.apps[app].mode = Mode::Normal;
            return Ok(());
        }
        self.apps[app].mode = Mode::Waiting;
        self.queue.push_back(app);
        if self.sampler.is_none() {
            self.start_next_sampling()?;
        }
        Ok(())
    }

    fn lfoc_assignment(&self) -> Result<ClusterAssignment, PolicyError> {
        let mut sets = ClassSets::default();
        let mut unknown = Vec::new();
        for (i, s) in self.apps.iter().enumerate() {
            match s.class {
                AppClass::Streaming => sets.streaming.push(i),
                AppClass::Sensitive => sets.sensitive.push((i, s.slowdown_table_estimate.clone())),
                AppClass::LightSharing => sets.light.push(i),
                AppClass::Unknown => unknown.push(i),
            }
        }
        if sets.is_empty() {
            return Ok(ClusterAssignment::single(self.n, self.k));
        }
        let mut a = lfoc_partition(&sets, self.k, self.params)?;
        if !unknown.is_empty() {
            let mut largest = 0;
            for (c, &w) in a.ways.iter().enumerate() {
                if w > a.ways[largest] {
                    largest = c;
                }
            }
            a.clusters[largest].extend(unknown);
        }
        Ok(a)
    }

    fn repartition(&mut self) -> Result<(), SimError> {
        if self.policy != SimPolicy::Lfoc || self.sampler.is_some() {
            return Ok(());
        }
        self.report.partition_invocations += 1;
        let a = self.lfoc_assignment().map_err(|source| SimError::Policy {
            time_ms: self.now,
            source,
        })?;
        self.enforce(a)
    }

    fn measure(&mut self, app: usize) -> (Measurement, f64) {
        let r = &self.run[app];
        let mut ipc = r.win_instr / r.win_cycles;
        let mut llc = r.win_misses / r.win_instr * 1e3;
        let stall = r.win_stall / r.win_cycles;
        if self.cfg.noise > 0.0 {
            ipc *= 1.0 + self.cfg.noise * self.rng.gen_range(-1.0..=1.0);
            llc *= 1.0 + self.cfg.noise * self.rng.gen_range(-1.0..=1.0);
        }
        (Measurement { ipc, llcmpkc: llc }, stall)
    }

    fn on_window(&mut self, app: usize) -> Result<(), SimError> {
        let (m, stall) = self.measure(app);
        let kind = match self.apps[app].mode {
            Mode::Warmup => SampleKind::Warmup,
            Mode::Waiting => SampleKind::Waiting,
            Mode::Sampling(_) => SampleKind::Sampling,
            Mode::Normal => SampleKind::Normal,
        };
        if self.cfg.record_samples {
            self.report.samples.push(SampleRecord {
                time_ms: self.now,
                app,
                kind,
                run_instructions: self.run[app].run_pos,
                ipc: m.ipc,
                llcmpkc: m.llcmpkc,
                stall_frac: stall,
                effective_ways: self.run[app].effective,
            });
        }
        self.reset_window(app);
        if self.policy != SimPolicy::Lfoc {
            return Ok(());
        }
        match self.apps[app].mode {
            Mode::Warmup => {
                self.apps[app].warmup_left -= 1;
                if self.apps[app].warmup_left == 0 {
                    self.enqueue(app)?;
                }
            }
            Mode::Waiting => {}
            Mode::Normal => {
                self.apps[app].push_sample(m.llcmpkc, stall, self.params);
                let e = self.run[app].effective;
                if detect_class_change(&self.apps[app], e, self.params) {
                    self.report.signals.push(ChangeSignal {
                        tick: self.tick,
                        time_ms: self.now,
                        app,
                        class: self.apps[app].class,
                    });
                    self.apps[app].history.clear();
                    self.enqueue(app)?;
                }
            }
            Mode::Sampling(_) => {
                let (sampler, sweep) = self.sampler.take().expect("sampling app has a sweep");
                debug_assert_eq!(sampler, app);
                self.report.sweep_steps += 1;
                match sampling_sweep_step(sweep, m, self.params) {
                    SweepStep::Next(next) => {
                        self.apps[app].mode = Mode::Sampling(next.ways);
                        let layout = self.sampling_layout(app, next.ways);
                        self.sampler = Some((app, next));
                        self.enforce(layout)?;
                    }
                    SweepStep::Finished(out) => {
                        let s = &mut self.apps[app];
                        if s.class != out.class {
                            self.report.class_transitions.push(ClassTransition {
                                tick: self.tick,
                                time_ms: self.now,
                                app,
                                from: s.class,
                                to: out.class,
                            });
                        }
                        s.class = out.class;
                        s.slowdown_table_estimate = out.slowdown_table;
                        s.critical_size = out.critical_size;
                        s.history.clear();
                        s.mode = Mode::Normal;
                        self.start_next_sampling()?;
                    }
                }
            }
        }
        Ok(())
    }

    fn on_events(&mut self, app: usize) -> Result<(), SimError> {
        let trace = &self.workload.traces[app];
        let total = trace.total_instructions() as f64;
        if total - self.run[app].run_pos <= EPS_INSTR {
            let r = &mut self.run[app];
            r.completion_times.push(self.now - r.run_start_ms);
            r.run_start_ms = self.now;
            r.run_pos = 0.0;
            r.seg = 0;
            r.seg_pos = 0.0;
            self.apps[app].completions += 1;
            self.dirty = true;
        } else {
            let dur = trace.segments()[self.run[app].seg].duration_instr as f64;
            if dur - self.run[app].seg_pos <= EPS_INSTR {
                let r = &mut self.run[app];
                r.seg = (r.seg + 1) % trace.segments().len();
                r.seg_pos = 0.0;
                self.dirty = true;
            }
        }
        if self.window_target(app) - self.run[app].win_instr <= EPS_INSTR {
            self.on_window(app)?;
        }
        Ok(())
    }

    fn log_period(&mut self) {
        self.refresh();
        let raw: Vec<f64> = (0..self.n).map(|a| self.profile(a).slowdown_clamped(self.run[a].effective)).collect();
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        self.report.periods.push(PeriodRecord {
            tick: self.tick,
            unfairness: max / min,
            stp: raw.iter().map(|s| 1.0 / s).sum(),
        });
    }

    fn run(mut self) -> Result<(Self, Vec<Vec<f64>>), SimError> {
        let period_ticks = ((self.params.repartition_period_ms / self.cfg.tick_ms).round() as u64).max(1);
        while !self.done() {
            if self.now > self.cfg.max_time_ms {
                return Err(SimError::Timeout(self.cfg.max_time_ms));
            }
            let tick_end = (self.tick + 1) as f64 * self.cfg.tick_ms;
            while self.now < tick_end && !self.done() {
                self.refresh();
                let mut dt = tick_end - self.now;
                for a in 0..self.n {
                    dt = dt.min(self.remaining(a) / self.run[a].rate);
                }
                self.advance(dt);
                if tick_end - self.now < 1e-9 {
                    self.now = tick_end;
                }
                for a in 0..self.n {
                    if self.remaining(a) <= EPS_INSTR {
                        self.on_events(a)?;
                    }
                }
            }
            if self.now >= tick_end {
                self.now = tick_end;
                self.tick += 1;
                if self.tick % period_ticks == 0 {
                    self.repartition()?;
                    if self.cfg.log_periods {
                        self.log_period();
                    }
                }
            }
        }
        let times = self.run.iter().map(|r| r.completion_times.clone()).collect();
        Ok((self, times))
    }
}

fn mean(v: &[f64], arithmetic: bool) -> f64 {
    if arithmetic {
        v.iter().sum::<f64>() / v.len() as f64
    } else {
        (v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64).exp()
    }
}

fn validate(workload: &TraceWorkload, cfg: &SimConfig) -> Result<(), SimError> {
    if !(cfg.tick_ms > 0.0 && cfg.tick_ms.is_finite()) {
        return Err(SimError::Config(format!("tick_ms must be positive, got {}", cfg.tick_ms)));
    }
    if cfg.completions_target == 0 {
        return Err(SimError::Config("completions_target must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.noise) {
        return Err(SimError::Config(format!("noise must lie in [0, 1), got {}", cfg.noise)));
    }
    cfg.params
        .validate()
        .map_err(|e| SimError::Config(e.to_string()))?;
    if cfg.bandwidth == BandwidthModel::Linear {
        metrics::check_bandwidth(&workload.averaged(), cfg.bandwidth)?;
    }
    Ok(())
}

fn initial_assignment(workload: &TraceWorkload, policy: SimPolicy) -> Result<ClusterAssignment, SimError> {
    let n = workload.traces.len();
    let k = workload.cache.nr_ways;
    let fixed = |kind| {
        baseline_assignment(n, k, kind).map_err(|source| SimError::Policy { time_ms: 0.0, source })
    };
    Ok(match policy {
        SimPolicy::Lfoc | SimPolicy::None => fixed(BaselineKind::None)?,
        SimPolicy::EqualPartition => fixed(BaselineKind::EqualPartition)?,
        SimPolicy::BestStaticOracle => optimal::best_static(&workload.averaged())?.assignment,
        SimPolicy::OptimalPartitioningOracle => {
            optimal::solve_optimal(
                &workload.averaged(),
                Objective::Fairness,
                SearchMode::Partitioning,
                Strategy::BranchAndBound,
            )?
            .assignment
        }
    })
}

/// Solo completion time of one run of each trace with the whole cache.
pub fn solo_times(workload: &TraceWorkload, config: &SimConfig) -> Result<Vec<f64>, SimError> {
    let solo_cfg = SimConfig {
        completions_target: 1,
        record_samples: false,
        log_periods: false,
        ..config.clone()
    };
    workload
        .traces
        .iter()
        .map(|t| {
            let single = TraceWorkload {
                traces: vec![t.clone()],
                cache: workload.cache.clone(),
            };
            let init = ClusterAssignment::single(1, single.cache.nr_ways);
            let (_, times) = Engine::new(&single, SimPolicy::None, &solo_cfg, 0, init).run()?;
            Ok(times[0][0])
        })
        .collect()
}

/// Runs `workload` under `policy` until every app has completed
/// `completions_target` runs.
pub fn run_simulation(
    workload: &TraceWorkload,
    policy: SimPolicy,
    config: &SimConfig,
    seed: u64,
) -> Result<SimReport, SimError> {
    validate(workload, config)?;
    let init = initial_assignment(workload, policy)?;
    let (engine, times) = Engine::new(workload, policy, config, seed, init).run()?;
    let solo = solo_times(workload, config)?;
    let mut report = engine.report;
    report.sim_time_ms = engine.now;
    report.ticks = engine.tick;
    report.apps = workload
        .traces
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mean_ms = mean(&times[i], config.arithmetic_mean);
            AppReport {
                name: t.name().to_string(),
                completion_times_ms: times[i].clone(),
                mean_completion_ms: mean_ms,
                solo_ms: solo[i],
                slowdown: mean_ms / solo[i],
                final_class: engine.apps[i].class,
            }
        })
        .collect();
    let s = report.slowdowns();
    report.unfairness = metrics::unfairness(&s)?;
    report.stp = metrics::stp(&s)?;
    Ok(report)
}
