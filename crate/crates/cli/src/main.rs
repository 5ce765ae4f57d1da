use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use cachelab::dynsim::{run_simulation, SimConfig, SimPolicy};
use cachelab::experiment::{
    gen_workload, parse_rows, report, run_experiment, ClassMix, ExperimentMode, ExperimentSpec, NamedWorkload,
    ReportFormat, ReportRow,
};
use cachelab::metrics::{evaluate, BandwidthModel, ClusterAssignment};
use cachelab::optimal::{count_space, solve_with, Objective, SearchMode, SolveOptions, Strategy, DEFAULT_BUDGET};
use cachelab::policies::LfocParams;
use cachelab::profiles::{
    load_profiles, load_traces, AppProfile, CacheConfig, PhaseTrace, TraceWorkload, WorkloadFile, WorkloadSpec,
};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "cachelab", version, about = "Shared-cache way partitioning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check profile, trace, workload or parameter files.
    Validate(ValidateArgs),
    /// Draw a random workload with a given class mix from a profile pool.
    GenWorkload(GenArgs),
    /// Score one cluster assignment.
    Evaluate(EvaluateArgs),
    /// Find the fairness- or throughput-optimal assignment.
    SolveOptimal(SolveArgs),
    /// Count feasible assignments.
    CountSpace(CountArgs),
    /// Run policies over workloads and emit normalized report rows.
    RunPolicy(RunPolicyArgs),
    /// Simulate one workload online under one policy.
    Simulate(SimulateArgs),
    /// Convert report rows between json, csv and plot data.
    Report(ReportArgs),
}

#[derive(Args)]
struct Inputs {
    /// Profile CSV (app,ways,ipc,llcmpkc,stall_frac[,bandwidth]).
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Phase-trace CSV (profile columns plus segment,duration_instr).
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Workload file; defaults to every app in the input, in order.
    #[arg(long)]
    workload: Option<PathBuf>,
    /// Way count when no workload file is given.
    #[arg(long, default_value_t = 11)]
    nways: usize,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long, default_value_t = 11)]
    nways: usize,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long)]
    napps: usize,
    /// streaming,sensitive,light counts, e.g. 2,3,3.
    #[arg(long)]
    mix: ClassMix,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 11)]
    nways: usize,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Clusters separated by ';', each `members:ways`, e.g. `0,2:4;1:7`.
    #[arg(long)]
    assignment: ClusterAssignment,
    #[arg(long, default_value = "off")]
    bandwidth: BandwidthModel,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value = "fairness")]
    objective: Objective,
    #[arg(long, default_value = "clustering")]
    mode: SearchMode,
    #[arg(long, default_value = "branch_and_bound")]
    strategy: Strategy,
    #[arg(long, default_value = "off")]
    bandwidth: BandwidthModel,
    /// Leaf budget for the exhaustive strategy.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    napps: usize,
    #[arg(long)]
    nways: usize,
    #[arg(long, default_value = "clustering")]
    mode: SearchMode,
}

#[derive(Args)]
struct SimOptions {
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "off")]
    bandwidth: BandwidthModel,
    /// Run length for profiles turned into stationary traces.
    #[arg(long, default_value_t = 5_000_000_000)]
    total_instr: u64,
    #[arg(long, default_value_t = 3)]
    completions: usize,
    #[arg(long, default_value_t = 1.0)]
    tick_ms: f64,
    /// Measure every way count during sampling.
    #[arg(long)]
    full_sweep: bool,
    /// Arithmetic instead of geometric mean of completion times.
    #[arg(long)]
    arithmetic_mean: bool,
    /// Relative measurement noise amplitude.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct RunPolicyArgs {
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Workload files; repeat for several.
    #[arg(long = "workload", required = true)]
    workloads: Vec<PathBuf>,
    /// Comma-separated subset of lfoc,none,equal_partition,best_static,optimal_partitioning.
    #[arg(long, value_delimiter = ',', default_value = "lfoc,none,equal_partition,best_static")]
    policy: Vec<SimPolicy>,
    #[arg(long, default_value = "static")]
    mode: ExperimentMode,
    /// Policy the rows are normalized against.
    #[arg(long, default_value = "none")]
    baseline: SimPolicy,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
    #[command(flatten)]
    sim: SimOptions,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value = "lfoc")]
    policy: SimPolicy,
    #[command(flatten)]
    sim: SimOptions,
    /// Include every monitoring sample in the output.
    #[arg(long)]
    record_samples: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Rows as written by run-policy (json envelope, bare json array or csv).
    #[arg(long)]
    rows: PathBuf,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Input files read so far, hashed into every JSON output.
#[derive(Default)]
struct Provenance {
    hasher: Sha256,
}

impl Provenance {
    fn read(&mut self, path: &Path) -> Result<String> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.hasher.update((text.len() as u64).to_le_bytes());
        self.hasher.update(text.as_bytes());
        Ok(text)
    }

    fn envelope(self, seed: Option<u64>, data: Value) -> Value {
        json!({
            "seed": seed,
            "inputs_sha256": hex::encode(self.hasher.finalize()),
            "data": data,
        })
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    let text = if text.ends_with('\n') { text.to_string() } else { format!("{text}\n") };
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json(out: Option<&Path>, v: &Value) -> Result<()> {
    emit(out, &serde_json::to_string_pretty(v)?)
}

fn load_params(prov: &mut Provenance, path: Option<&PathBuf>) -> Result<LfocParams> {
    match path {
        None => Ok(LfocParams::default()),
        Some(p) => Ok(LfocParams::from_config_str(&prov.read(p)?).with_context(|| p.display().to_string())?),
    }
}

fn read_workload_file(prov: &mut Provenance, path: &Path) -> Result<WorkloadFile> {
    WorkloadFile::parse(&prov.read(path)?).with_context(|| path.display().to_string())
}

fn default_file(names: Vec<String>, nways: usize) -> WorkloadFile {
    WorkloadFile {
        apps: names,
        cache: CacheConfig::with_ways(nways),
        total_instr: None,
        comments: Vec::new(),
    }
}

fn profile_pool(prov: &mut Provenance, path: &Path, cache: &CacheConfig) -> Result<Vec<AppProfile>> {
    load_profiles(&prov.read(path)?, cache).with_context(|| path.display().to_string())
}

fn trace_pool(prov: &mut Provenance, path: &Path, cache: &CacheConfig) -> Result<Vec<PhaseTrace>> {
    load_traces(&prov.read(path)?, cache).with_context(|| path.display().to_string())
}

/// Static workload from profiles, or from trace averages when only traces
/// were given.
fn static_workload(prov: &mut Provenance, inputs: &Inputs) -> Result<WorkloadSpec> {
    let file = inputs.workload.as_deref().map(|p| read_workload_file(prov, p)).transpose()?;
    let cache = file.as_ref().map_or_else(|| CacheConfig::with_ways(inputs.nways), |f| f.cache.clone());
    match (&inputs.profiles, &inputs.traces) {
        (Some(p), _) => {
            let pool = profile_pool(prov, p, &cache)?;
            let file = file.unwrap_or_else(|| default_file(pool.iter().map(|a| a.name().to_string()).collect(), cache.nr_ways));
            Ok(file.resolve_profiles(&pool)?)
        }
        (None, Some(t)) => {
            let pool = trace_pool(prov, t, &cache)?;
            let file = file.unwrap_or_else(|| default_file(pool.iter().map(|a| a.name().to_string()).collect(), cache.nr_ways));
            Ok(file.resolve_traces(&pool)?.averaged())
        }
        (None, None) => bail!("one of --profiles or --traces is required"),
    }
}

/// Trace workload from traces, or stationary traces built from profiles.
fn trace_workload(prov: &mut Provenance, inputs: &Inputs, total_instr: u64) -> Result<TraceWorkload> {
    let file = inputs.workload.as_deref().map(|p| read_workload_file(prov, p)).transpose()?;
    let cache = file.as_ref().map_or_else(|| CacheConfig::with_ways(inputs.nways), |f| f.cache.clone());
    match (&inputs.traces, &inputs.profiles) {
        (Some(t), _) => {
            let pool = trace_pool(prov, t, &cache)?;
            let file = file.unwrap_or_else(|| default_file(pool.iter().map(|a| a.name().to_string()).collect(), cache.nr_ways));
            Ok(file.resolve_traces(&pool)?)
        }
        (None, Some(p)) => {
            let pool = profile_pool(prov, p, &cache)?;
            let file = file.unwrap_or_else(|| default_file(pool.iter().map(|a| a.name().to_string()).collect(), cache.nr_ways));
            let total = file.total_instr.unwrap_or(total_instr);
            Ok(TraceWorkload::from_profiles(&file.resolve_profiles(&pool)?, total)?)
        }
        (None, None) => bail!("one of --profiles or --traces is required"),
    }
}

fn sim_config(prov: &mut Provenance, o: &SimOptions) -> Result<SimConfig> {
    Ok(SimConfig {
        tick_ms: o.tick_ms,
        params: load_params(prov, o.params.as_ref())?,
        completions_target: o.completions,
        bandwidth: o.bandwidth,
        full_sweep: o.full_sweep,
        arithmetic_mean: o.arithmetic_mean,
        noise: o.noise,
        ..Default::default()
    })
}

fn validate(args: &ValidateArgs) -> Result<()> {
    let cache = CacheConfig::with_ways(args.nways);
    let mut failed = 0;
    for path in &args.files {
        let outcome = fs::read_to_string(path)
            .map_err(anyhow::Error::from)
            .and_then(|text| describe(&text, &cache));
        match outcome {
            Ok(desc) => println!("{}: ok, {desc}", path.display()),
            Err(e) => {
                failed += 1;
                println!("{}: invalid, {e:#}", path.display());
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} files invalid", args.files.len());
    }
    Ok(())
}

fn describe(text: &str, cache: &CacheConfig) -> Result<String> {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let columns: Vec<&str> = first.split(',').map(str::trim).collect();
    if columns.contains(&"app") && columns.contains(&"ways") {
        if columns.contains(&"segment") {
            let traces = load_traces(text, cache)?;
            let segments: usize = traces.iter().map(|t| t.segments().len()).sum();
            return Ok(format!("{} traces, {segments} segments", traces.len()));
        }
        return Ok(format!("{} profiles", load_profiles(text, cache)?.len()));
    }
    let workload_err = match WorkloadFile::parse(text) {
        Ok(w) => return Ok(format!("workload of {} apps on {} ways", w.apps.len(), w.cache.nr_ways)),
        Err(e) => e,
    };
    match LfocParams::from_config_str(text) {
        Ok(_) => Ok("policy parameters".into()),
        Err(_) => Err(anyhow!(workload_err)),
    }
}

fn gen(args: &GenArgs) -> Result<()> {
    let mut prov = Provenance::default();
    let params = load_params(&mut prov, args.params.as_ref())?;
    let cache = CacheConfig::with_ways(args.nways);
    let pool = profile_pool(&mut prov, &args.profiles, &cache)?;
    let g = gen_workload(&pool, &cache, args.napps, args.mix, args.seed, &params)?;
    let mut file = g.file;
    file.comments.push(format!("inputs_sha256={}", hex::encode(prov.hasher.finalize())));
    for (name, count) in &g.instances {
        file.comments.push(format!("instances {name}={count}"));
    }
    emit(args.out.as_deref(), &file.render())
}

fn eval_cmd(args: &EvaluateArgs) -> Result<()> {
    let mut prov = Provenance::default();
    let w = static_workload(&mut prov, &args.inputs)?;
    let r = evaluate(&args.assignment, &w, args.bandwidth)?;
    emit_json(args.out.as_deref(), &prov.envelope(None, serde_json::to_value(r)?))
}

fn solve(args: &SolveArgs) -> Result<()> {
    let mut prov = Provenance::default();
    let w = static_workload(&mut prov, &args.inputs)?;
    let opts = SolveOptions {
        objective: args.objective,
        mode: args.mode,
        strategy: args.strategy,
        bandwidth: args.bandwidth,
        budget: args.budget,
        threads: args.threads,
    };
    let s = solve_with(&w, &opts)?;
    emit_json(args.out.as_deref(), &prov.envelope(None, serde_json::to_value(s.summary())?))
}

fn count(args: &CountArgs) -> Result<()> {
    println!("{}", count_space(args.napps, args.nways, args.mode)?);
    Ok(())
}

fn run_policy(args: &RunPolicyArgs) -> Result<()> {
    let mut prov = Provenance::default();
    let sim = sim_config(&mut prov, &args.sim)?;
    let mut workloads = Vec::new();
    for path in &args.workloads {
        let inputs = Inputs {
            profiles: args.profiles.clone(),
            traces: args.traces.clone(),
            workload: Some(path.clone()),
            nways: 11,
        };
        let spec = static_workload(&mut prov, &inputs)?;
        let traces = match args.mode {
            ExperimentMode::Dynamic => Some(trace_workload(&mut prov, &inputs, args.sim.total_instr)?),
            ExperimentMode::Static => None,
        };
        let id = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        workloads.push(NamedWorkload { id, spec, traces });
    }
    let mut spec = ExperimentSpec::new(workloads, args.policy.clone(), args.mode, args.sim.seed);
    spec.params = sim.params.clone();
    spec.bandwidth = args.sim.bandwidth;
    spec.baseline = args.baseline;
    spec.sim = sim;
    let rows = run_experiment(&spec)?;
    let seed = Some(args.sim.seed);
    match args.format {
        ReportFormat::Json => emit_json(args.out.as_deref(), &prov.envelope(seed, serde_json::to_value(&rows)?)),
        ReportFormat::Plotdata => {
            let plot = serde_json::from_str::<Value>(&report(&rows, ReportFormat::Plotdata)?)?;
            emit_json(args.out.as_deref(), &prov.envelope(seed, plot))
        }
        ReportFormat::Csv => {
            emit(args.out.as_deref(), &report(&rows, ReportFormat::Csv)?)?;
            if let Some(out) = &args.out {
                let meta = prov.envelope(seed, json!({ "rows": rows.len() }));
                let mut name = out.clone().into_os_string();
                name.push(".meta.json");
                emit_json(Some(Path::new(&name)), &meta)?;
            }
            Ok(())
        }
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut prov = Provenance::default();
    let mut cfg = sim_config(&mut prov, &args.sim)?;
    cfg.record_samples = args.record_samples;
    let w = trace_workload(&mut prov, &args.inputs, args.sim.total_instr)?;
    let r = run_simulation(&w, args.policy, &cfg, args.sim.seed)?;
    emit_json(args.out.as_deref(), &prov.envelope(Some(args.sim.seed), serde_json::to_value(r)?))
}

fn report_cmd(args: &ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.rows).with_context(|| format!("reading {}", args.rows.display()))?;
    let rows: Vec<ReportRow> = match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(mut env)) => {
            let data = env.remove("data").ok_or_else(|| anyhow!("json object without a data field"))?;
            serde_json::from_value(data)?
        }
        _ => parse_rows(&text)?,
    };
    emit(args.out.as_deref(), &report(&rows, args.format)?)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Validate(a) => validate(a),
        Command::GenWorkload(a) => gen(a),
        Command::Evaluate(a) => eval_cmd(a),
        Command::SolveOptimal(a) => solve(a),
        Command::CountSpace(a) => count(a),
        Command::RunPolicy(a) => run_policy(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
