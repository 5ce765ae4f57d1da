//! Per-application performance profiles indexed by LLC way count, phase
//! traces built from them, and the workload description file.
//!
//! Tables are stored with index `w - 1` holding the value measured with `w`
//! ways, for `w` in `1..=k`. Lookups at fractional way counts interpolate
//! linearly between the two bracketing integer entries.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("missing way {way} for {app}")]
    MissingWay { app: String, way: usize },
    #[error("{app}: {msg}")]
    Invalid { app: String, msg: String },
    #[error("ways {ways} outside [1, {nr_ways}]")]
    Domain { ways: f64, nr_ways: usize },
    #[error("metric unavailable: {0}")]
    MetricUnavailable(Metric),
    #[error("invalid cache configuration: {0}")]
    Config(String),
    #[error("workload file line {line}: {msg}")]
    Workload { line: usize, msg: String },
    #[error("unknown application {0}")]
    UnknownApp(String),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for ProfileError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line());
        match line {
            Some(line) => ProfileError::Row {
                line,
                msg: e.to_string(),
            },
            None => ProfileError::Csv(e.to_string()),
        }
    }
}

/// Geometry of the shared cache and the core clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub nr_ways: usize,
    pub way_size_mib: f64,
    pub clock_hz: f64,
    /// Bytes per second; only consulted by the linear bandwidth model.
    pub peak_bandwidth: Option<f64>,
}

impl Default for CacheConfig {
    /// 11 ways of 2.5 MiB at 2 GHz (Xeon Gold 6138).
    fn default() -> Self {
        CacheConfig {
            nr_ways: 11,
            way_size_mib: 2.5,
            clock_hz: 2.0e9,
            peak_bandwidth: None,
        }
    }
}

impl CacheConfig {
    pub fn with_ways(nr_ways: usize) -> Self {
        CacheConfig {
            nr_ways,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.nr_ways < 2 {
            return Err(ProfileError::Config(format!(
                "nr_ways must be at least 2, got {}",
                self.nr_ways
            )));
        }
        if !(self.way_size_mib > 0.0 && self.way_size_mib.is_finite()) {
            return Err(ProfileError::Config(format!(
                "way_size_mib must be positive, got {}",
                self.way_size_mib
            )));
        }
        if !(self.clock_hz > 0.0 && self.clock_hz.is_finite()) {
            return Err(ProfileError::Config(format!(
                "clock_hz must be positive, got {}",
                self.clock_hz
            )));
        }
        if let Some(bw) = self.peak_bandwidth {
            if !(bw > 0.0 && bw.is_finite()) {
                return Err(ProfileError::Config(format!(
                    "peak_bandwidth must be positive, got {bw}"
                )));
            }
        }
        Ok(())
    }
}

/// A per-way table that can be looked up by [`AppProfile::table_at`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ipc,
    Llcmpkc,
    StallFrac,
    Bandwidth,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Ipc => "ipc",
            Metric::Llcmpkc => "llcmpkc",
            Metric::StallFrac => "stall_frac",
            Metric::Bandwidth => "bandwidth",
        })
    }
}

/// Solo-run behaviour of one application for every way count `1..=k`.
///
/// Immutable after construction; the slowdown table is derived from the IPC
/// table as `ipc(k) / ipc(w)` and clamped below at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AppProfile {
    name: String,
    ipc: Vec<f64>,
    llcmpkc: Vec<f64>,
    stall_frac: Vec<f64>,
    bandwidth: Option<Vec<f64>>,
    slowdown: Vec<f64>,
}

impl AppProfile {
    pub fn new(
        name: impl Into<String>,
        ipc: Vec<f64>,
        llcmpkc: Vec<f64>,
        stall_frac: Vec<f64>,
        bandwidth: Option<Vec<f64>>,
    ) -> Result<Self, ProfileError> {
        let name = name.into();
        let invalid = |msg: String| ProfileError::Invalid {
            app: name.clone(),
            msg,
        };
        let k = ipc.len();
        if k == 0 {
            return Err(invalid("empty ipc table".into()));
        }
        if llcmpkc.len() != k || stall_frac.len() != k {
            return Err(invalid(format!(
                "table lengths differ: ipc {}, llcmpkc {}, stall_frac {}",
                k,
                llcmpkc.len(),
                stall_frac.len()
            )));
        }
        for (i, &v) in ipc.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("non-positive ipc {v} at way {}", i + 1)));
            }
        }
        for (i, &v) in llcmpkc.iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("invalid llcmpkc {v} at way {}", i + 1)));
            }
        }
        for (i, &v) in stall_frac.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!(
                    "stall_frac {v} outside [0,1] at way {}",
                    i + 1
                )));
            }
        }
        if let Some(bw) = &bandwidth {
            if bw.len() != k {
                return Err(invalid(format!(
                    "bandwidth table has {} entries, expected {k}",
                    bw.len()
                )));
            }
            for (i, &v) in bw.iter().enumerate() {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(invalid(format!("invalid bandwidth {v} at way {}", i + 1)));
                }
            }
        }
        let top = ipc[k - 1];
        let slowdown = ipc.iter().map(|&v| (top / v).max(1.0)).collect();
        Ok(AppProfile {
            name,
            ipc,
            llcmpkc,
            stall_frac,
            bandwidth,
            slowdown,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nr_ways(&self) -> usize {
        self.ipc.len()
    }

    pub fn ipc(&self) -> &[f64] {
        &self.ipc
    }

    pub fn llcmpkc(&self) -> &[f64] {
        &self.llcmpkc
    }

    pub fn stall_frac(&self) -> &[f64] {
        &self.stall_frac
    }

    pub fn bandwidth(&self) -> Option<&[f64]> {
        self.bandwidth.as_deref()
    }

    /// Integer-indexed slowdown table relative to running with all ways.
    pub fn slowdown_table(&self) -> &[f64] {
        &self.slowdown
    }

    /// IPC with the full cache.
    pub fn ipc_alone(&self) -> f64 {
        self.ipc[self.ipc.len() - 1]
    }

    fn check_domain(&self, ways: f64) -> Result<(), ProfileError> {
        let k = self.nr_ways();
        if !(ways.is_finite() && ways >= 1.0 && ways <= k as f64) {
            return Err(ProfileError::Domain { ways, nr_ways: k });
        }
        Ok(())
    }

    /// Slowdown with `ways` ways, interpolated for fractional counts and never
    /// below 1.
    pub fn slowdown_at(&self, ways: f64) -> Result<f64, ProfileError> {
        self.check_domain(ways)?;
        Ok(interpolate(&self.slowdown, ways).max(1.0))
    }

    pub fn table_at(&self, metric: Metric, ways: f64) -> Result<f64, ProfileError> {
        self.check_domain(ways)?;
        let table = self.table(metric)?;
        Ok(interpolate(table, ways))
    }

    pub fn table(&self, metric: Metric) -> Result<&[f64], ProfileError> {
        match metric {
            Metric::Ipc => Ok(&self.ipc),
            Metric::Llcmpkc => Ok(&self.llcmpkc),
            Metric::StallFrac => Ok(&self.stall_frac),
            Metric::Bandwidth => self
                .bandwidth
                .as_deref()
                .ok_or(ProfileError::MetricUnavailable(Metric::Bandwidth)),
        }
    }

    /// Slowdown lookup with the way count clamped into `[1, k]`. Used by the
    /// sharing model, where an app's effective share may fall below one way.
    pub(crate) fn slowdown_clamped(&self, ways: f64) -> f64 {
        interpolate(&self.slowdown, self.clamp_ways(ways)).max(1.0)
    }

    pub(crate) fn metric_clamped(&self, table: &[f64], ways: f64) -> f64 {
        interpolate(table, self.clamp_ways(ways))
    }

    pub(crate) fn clamp_ways(&self, ways: f64) -> f64 {
        ways.clamp(1.0, self.nr_ways() as f64)
    }
}

/// Linear interpolation over a table indexed from way count 1. Integer
/// arguments return the table entry unchanged.
pub(crate) fn interpolate(table: &[f64], ways: f64) -> f64 {
    let lo = ways.floor();
    let idx = lo as usize;
    if ways == lo {
        return table[idx - 1];
    }
    let a = table[idx - 1];
    let b = table[idx];
    a + (ways - lo) * (b - a)
}

/// One instruction-bounded program phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub duration_instr: u64,
    pub profile: AppProfile,
}

/// Sequence of phases making up one run of a program. Segments repeat
/// cyclically if their durations add up to less than `total_instructions`;
/// every run restarts at the first segment.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrace {
    name: String,
    segments: Vec<Segment>,
    total_instructions: u64,
}

impl PhaseTrace {
    pub fn new(
        name: impl Into<String>,
        segments: Vec<Segment>,
        total_instructions: u64,
    ) -> Result<Self, ProfileError> {
        let name = name.into();
        let invalid = |msg: &str| ProfileError::Invalid {
            app: name.clone(),
            msg: msg.to_string(),
        };
        if segments.is_empty() {
            return Err(invalid("trace has no segments"));
        }
        if total_instructions == 0 {
            return Err(invalid("total_instructions must be positive"));
        }
        let k = segments[0].profile.nr_ways();
        for s in &segments {
            if s.duration_instr == 0 {
                return Err(invalid("segment duration must be positive"));
            }
            if s.profile.nr_ways() != k {
                return Err(invalid("segments disagree on way count"));
            }
        }
        Ok(PhaseTrace {
            name,
            segments,
            total_instructions,
        })
    }

    /// Single-segment trace that runs `profile` for `total_instructions`.
    pub fn stationary(profile: AppProfile, total_instructions: u64) -> Result<Self, ProfileError> {
        let name = profile.name().to_string();
        PhaseTrace::new(
            name,
            vec![Segment {
                duration_instr: total_instructions.max(1),
                profile,
            }],
            total_instructions,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_instructions(&self) -> u64 {
        self.total_instructions
    }

    pub fn nr_ways(&self) -> usize {
        self.segments[0].profile.nr_ways()
    }

    pub fn with_total_instructions(mut self, total: u64) -> Result<Self, ProfileError> {
        if total == 0 {
            return Err(ProfileError::Invalid {
                app: self.name,
                msg: "total_instructions must be positive".into(),
            });
        }
        self.total_instructions = total;
        Ok(self)
    }

    /// Instructions spent in each segment during one run.
    pub fn segment_weights(&self) -> Vec<u64> {
        let mut weights = vec![0u64; self.segments.len()];
        let mut left = self.total_instructions;
        'outer: loop {
            for (i, s) in self.segments.iter().enumerate() {
                let take = s.duration_instr.min(left);
                weights[i] += take;
                left -= take;
                if left == 0 {
                    break 'outer;
                }
            }
        }
        weights
    }

    /// Instruction-weighted summary profile of one run. IPC is averaged over
    /// cycles (harmonic in IPC), the other tables arithmetically.
    pub fn average_profile(&self) -> AppProfile {
        let weights = self.segment_weights();
        let total: f64 = weights.iter().map(|&w| w as f64).sum();
        let k = self.nr_ways();
        let mut cpi = vec![0.0; k];
        let mut llc = vec![0.0; k];
        let mut stall = vec![0.0; k];
        let has_bw = self.segments.iter().all(|s| s.profile.bandwidth().is_some());
        let mut bw = vec![0.0; k];
        for (s, &wt) in self.segments.iter().zip(&weights) {
            let f = wt as f64 / total;
            for w in 0..k {
                cpi[w] += f / s.profile.ipc[w];
                llc[w] += f * s.profile.llcmpkc[w];
                stall[w] += f * s.profile.stall_frac[w];
                if has_bw {
                    bw[w] += f * s.profile.bandwidth.as_ref().unwrap()[w];
                }
            }
        }
        let ipc = cpi.iter().map(|c| 1.0 / c).collect();
        let stall = stall.into_iter().map(|v: f64| v.clamp(0.0, 1.0)).collect();
        AppProfile::new(
            self.name.clone(),
            ipc,
            llc,
            stall,
            if has_bw { Some(bw) } else { None },
        )
        .expect("averages of valid tables are valid")
    }
}

/// Applications under study plus the cache they share.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub apps: Vec<AppProfile>,
    pub cache: CacheConfig,
}

impl WorkloadSpec {
    pub fn new(apps: Vec<AppProfile>, cache: CacheConfig) -> Result<Self, ProfileError> {
        cache.validate()?;
        if apps.is_empty() {
            return Err(ProfileError::Config("workload has no applications".into()));
        }
        for a in &apps {
            if a.nr_ways() != cache.nr_ways {
                return Err(ProfileError::Invalid {
                    app: a.name().to_string(),
                    msg: format!(
                        "profile has {} ways, cache has {}",
                        a.nr_ways(),
                        cache.nr_ways
                    ),
                });
            }
        }
        Ok(WorkloadSpec { apps, cache })
    }

    pub fn len(&self) -> usize {
        self.apps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apps.is_empty()
    }

    pub fn nr_ways(&self) -> usize {
        self.cache.nr_ways
    }
}

/// Phase traces plus the cache they share; input to the dynamic simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceWorkload {
    pub traces: Vec<PhaseTrace>,
    pub cache: CacheConfig,
}

impl TraceWorkload {
    pub fn new(traces: Vec<PhaseTrace>, cache: CacheConfig) -> Result<Self, ProfileError> {
        cache.validate()?;
        if traces.is_empty() {
            return Err(ProfileError::Config("workload has no applications".into()));
        }
        for t in &traces {
            if t.nr_ways() != cache.nr_ways {
                return Err(ProfileError::Invalid {
                    app: t.name().to_string(),
                    msg: format!("trace has {} ways, cache has {}", t.nr_ways(), cache.nr_ways),
                });
            }
        }
        Ok(TraceWorkload { traces, cache })
    }

    pub fn from_profiles(spec: &WorkloadSpec, total_instructions: u64) -> Result<Self, ProfileError> {
        let traces = spec
            .apps
            .iter()
            .map(|p| PhaseTrace::stationary(p.clone(), total_instructions))
            .collect::<Result<Vec<_>, _>>()?;
        TraceWorkload::new(traces, spec.cache.clone())
    }

    /// Static view used by the offline oracles: every trace collapsed to its
    /// instruction-weighted average profile.
    pub fn averaged(&self) -> WorkloadSpec {
        WorkloadSpec {
            apps: self.traces.iter().map(|t| t.average_profile()).collect(),
            cache: self.cache.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct Columns {
    app: usize,
    ways: usize,
    ipc: usize,
    llcmpkc: usize,
    stall_frac: usize,
    bandwidth: Option<usize>,
    segment: Option<usize>,
    duration: Option<usize>,
}

impl Columns {
    fn from_header(header: &csv::StringRecord, trace: bool) -> Result<Self, ProfileError> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let need = |name: &str| {
            find(name).ok_or_else(|| ProfileError::Row {
                line: 1,
                msg: format!("header lacks column {name}"),
            })
        };
        let cols = Columns {
            app: need("app")?,
            ways: need("ways")?,
            ipc: need("ipc")?,
            llcmpkc: need("llcmpkc")?,
            stall_frac: need("stall_frac")?,
            bandwidth: find("bandwidth"),
            segment: if trace { Some(need("segment")?) } else { None },
            duration: if trace { Some(need("duration_instr")?) } else { None },
        };
        Ok(cols)
    }
}

fn field<'r>(rec: &'r csv::StringRecord, idx: usize, line: u64, name: &str) -> Result<&'r str, ProfileError> {
    rec.get(idx).map(str::trim).ok_or_else(|| ProfileError::Row {
        line,
        msg: format!("missing field {name}"),
    })
}

fn number(rec: &csv::StringRecord, idx: usize, line: u64, name: &str) -> Result<f64, ProfileError> {
    let s = field(rec, idx, line, name)?;
    s.parse::<f64>().map_err(|_| ProfileError::Row {
        line,
        msg: format!("non-numeric {name} {s:?}"),
    })
}

fn integer(rec: &csv::StringRecord, idx: usize, line: u64, name: &str) -> Result<u64, ProfileError> {
    let s = field(rec, idx, line, name)?;
    s.parse::<u64>().map_err(|_| ProfileError::Row {
        line,
        msg: format!("non-integer {name} {s:?}"),
    })
}

#[derive(Default)]
struct TableRows {
    ipc: Vec<Option<f64>>,
    llcmpkc: Vec<f64>,
    stall: Vec<f64>,
    bandwidth: Vec<Option<f64>>,
    first_line: u64,
}

impl TableRows {
    fn new(k: usize, line: u64) -> Self {
        TableRows {
            ipc: vec![None; k],
            llcmpkc: vec![0.0; k],
            stall: vec![0.0; k],
            bandwidth: vec![None; k],
            first_line: line,
        }
    }

    fn insert(&mut self, rec: &csv::StringRecord, cols: &Columns, line: u64, app: &str, k: usize) -> Result<(), ProfileError> {
        let way = integer(rec, cols.ways, line, "ways")? as usize;
        if way == 0 || way > k {
            return Err(ProfileError::Row {
                line,
                msg: format!("{app}: way count {way} outside 1..={k}"),
            });
        }
        let ipc = number(rec, cols.ipc, line, "ipc")?;
        if !(ipc > 0.0 && ipc.is_finite()) {
            return Err(ProfileError::Row {
                line,
                msg: format!("{app}: non-positive ipc {ipc}"),
            });
        }
        if self.ipc[way - 1].is_some() {
            return Err(ProfileError::Row {
                line,
                msg: format!("duplicate row for {app} at way {way}"),
            });
        }
        self.ipc[way - 1] = Some(ipc);
        self.llcmpkc[way - 1] = number(rec, cols.llcmpkc, line, "llcmpkc")?;
        self.stall[way - 1] = number(rec, cols.stall_frac, line, "stall_frac")?;
        if let Some(bi) = cols.bandwidth {
            let s = field(rec, bi, line, "bandwidth")?;
            if !s.is_empty() {
                self.bandwidth[way - 1] = Some(number(rec, bi, line, "bandwidth")?);
            }
        }
        Ok(())
    }

    fn into_profile(self, app: &str) -> Result<AppProfile, ProfileError> {
        let mut ipc = Vec::with_capacity(self.ipc.len());
        for (i, v) in self.ipc.iter().enumerate() {
            match v {
                Some(v) => ipc.push(*v),
                None => {
                    return Err(ProfileError::MissingWay {
                        app: app.to_string(),
                        way: i + 1,
                    })
                }
            }
        }
        let present = self.bandwidth.iter().filter(|b| b.is_some()).count();
        let bandwidth = if present == 0 {
            None
        } else if present == self.bandwidth.len() {
            Some(self.bandwidth.iter().map(|b| b.unwrap()).collect())
        } else {
            return Err(ProfileError::Row {
                line: self.first_line,
                msg: format!("{app}: bandwidth given for some way counts only"),
            });
        };
        AppProfile::new(app, ipc, self.llcmpkc, self.stall, bandwidth).map_err(|e| match e {
            ProfileError::Invalid { app, msg } => ProfileError::Row {
                line: self.first_line,
                msg: format!("{app}: {msg}"),
            },
            other => other,
        })
    }
}

fn reader(source: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source.as_bytes())
}

/// Parses profile CSV (`app,ways,ipc,llcmpkc,stall_frac[,bandwidth]`).
/// Applications are returned in order of first appearance; every app must
/// provide each way count `1..=cache.nr_ways` exactly once.
pub fn load_profiles(source: &str, cache: &CacheConfig) -> Result<Vec<AppProfile>, ProfileError> {
    let k = cache.nr_ways;
    let mut rdr = reader(source);
    let header = rdr.headers()?.clone();
    let cols = Columns::from_header(&header, false)?;
    let mut order: Vec<String> = Vec::new();
    let mut tables: HashMap<String, TableRows> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let app = field(&rec, cols.app, line, "app")?.to_string();
        if app.is_empty() {
            return Err(ProfileError::Row {
                line,
                msg: "empty app name".into(),
            });
        }
        let entry = tables.entry(app.clone()).or_insert_with(|| {
            order.push(app.clone());
            TableRows::new(k, line)
        });
        entry.insert(&rec, &cols, line, &app, k)?;
    }
    order
        .into_iter()
        .map(|app| {
            let t = tables.remove(&app).unwrap();
            t.into_profile(&app)
        })
        .collect()
}

/// Parses phase-trace CSV: the profile columns plus `segment` (ordering key)
/// and `duration_instr`. Each trace's run length defaults to the sum of its
/// segment durations.
pub fn load_traces(source: &str, cache: &CacheConfig) -> Result<Vec<PhaseTrace>, ProfileError> {
    let k = cache.nr_ways;
    let mut rdr = reader(source);
    let header = rdr.headers()?.clone();
    let cols = Columns::from_header(&header, true)?;
    let (seg_col, dur_col) = (cols.segment.unwrap(), cols.duration.unwrap());
    let mut order: Vec<String> = Vec::new();
    let mut traces: HashMap<String, Vec<(u64, u64, TableRows)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let app = field(&rec, cols.app, line, "app")?.to_string();
        let seg = integer(&rec, seg_col, line, "segment")?;
        let dur = integer(&rec, dur_col, line, "duration_instr")?;
        if dur == 0 {
            return Err(ProfileError::Row {
                line,
                msg: format!("{app}: segment duration must be positive"),
            });
        }
        let segs = traces.entry(app.clone()).or_insert_with(|| {
            order.push(app.clone());
            Vec::new()
        });
        let slot = match segs.iter().position(|(id, _, _)| *id == seg) {
            Some(p) => {
                if segs[p].1 != dur {
                    return Err(ProfileError::Row {
                        line,
                        msg: format!("{app}: inconsistent duration for segment {seg}"),
                    });
                }
                p
            }
            None => {
                segs.push((seg, dur, TableRows::new(k, line)));
                segs.len() - 1
            }
        };
        segs[slot].2.insert(&rec, &cols, line, &app, k)?;
    }
    let mut out = Vec::with_capacity(order.len());
    for app in order {
        let mut segs = traces.remove(&app).unwrap();
        segs.sort_by_key(|(id, _, _)| *id);
        let mut segments = Vec::with_capacity(segs.len());
        let mut total = 0u64;
        for (_, dur, rows) in segs {
            total += dur;
            segments.push(Segment {
                duration_instr: dur,
                profile: rows.into_profile(&app)?,
            });
        }
        out.push(PhaseTrace::new(app, segments, total)?);
    }
    Ok(out)
}

fn write_rows(out: &mut String, p: &AppProfile, prefix: &str, with_bw: bool) {
    for w in 0..p.nr_ways() {
        let _ = write!(
            out,
            "{},{}{},{},{},{}",
            p.name,
            prefix,
            w + 1,
            p.ipc[w],
            p.llcmpkc[w],
            p.stall_frac[w]
        );
        if with_bw {
            match &p.bandwidth {
                Some(bw) => {
                    let _ = write!(out, ",{}", bw[w]);
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
}

/// Serializes profiles back to CSV. Float formatting is shortest
/// round-trip, so reloading reproduces every table bit for bit.
pub fn write_profiles(profiles: &[AppProfile]) -> String {
    let with_bw = profiles.iter().any(|p| p.bandwidth.is_some());
    let mut out = String::from("app,ways,ipc,llcmpkc,stall_frac");
    if with_bw {
        out.push_str(",bandwidth");
    }
    out.push('\n');
    for p in profiles {
        write_rows(&mut out, p, "", with_bw);
    }
    out
}

pub fn write_traces(traces: &[PhaseTrace]) -> String {
    let with_bw = traces
        .iter()
        .flat_map(|t| &t.segments)
        .any(|s| s.profile.bandwidth.is_some());
    let mut out = String::from("app,segment,duration_instr,ways,ipc,llcmpkc,stall_frac");
    if with_bw {
        out.push_str(",bandwidth");
    }
    out.push('\n');
    for t in traces {
        for (i, s) in t.segments.iter().enumerate() {
            write_rows(&mut out, &s.profile, &format!("{},{},", i, s.duration_instr), with_bw);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Workload files

/// Parsed workload file: application references plus the cache stanza.
///
/// ```text
/// # comment
/// nr_ways=11
/// way_size_mib=2.5
/// clock_hz=2000000000
/// lbm
/// xalancbmk
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadFile {
    pub apps: Vec<String>,
    pub cache: CacheConfig,
    /// Overrides every trace's run length when set (`total_instr=`).
    pub total_instr: Option<u64>,
    /// Trailing `#` comment lines, kept for provenance.
    pub comments: Vec<String>,
}

impl WorkloadFile {
    pub fn parse(source: &str) -> Result<Self, ProfileError> {
        let mut cache = CacheConfig::default();
        let mut apps = Vec::new();
        let mut total_instr = None;
        let mut comments = Vec::new();
        for (i, raw) in source.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.trim().to_string());
                continue;
            }
            let bad = |msg: String| ProfileError::Workload { line: line_no, msg };
            if let Some((key, value)) = line.split_once('=') {
                let (key, value) = (key.trim(), value.trim());
                let num = || value.parse::<f64>().map_err(|_| bad(format!("non-numeric {key} {value:?}")));
                match key {
                    "nr_ways" => {
                        cache.nr_ways = value
                            .parse()
                            .map_err(|_| bad(format!("non-integer nr_ways {value:?}")))?
                    }
                    "way_size_mib" => cache.way_size_mib = num()?,
                    "clock_hz" => cache.clock_hz = num()?,
                    "peak_bandwidth" => cache.peak_bandwidth = Some(num()?),
                    "total_instr" => {
                        let v = num()?;
                        if !(v >= 1.0 && v.is_finite()) {
                            return Err(bad(format!("total_instr must be positive, got {value}")));
                        }
                        total_instr = Some(v as u64)
                    }
                    "app" => apps.push(value.to_string()),
                    other => return Err(bad(format!("unknown key {other:?}"))),
                }
            } else {
                if line.contains(char::is_whitespace) || line.contains(',') {
                    return Err(bad(format!("expected one application name, got {line:?}")));
                }
                apps.push(line.to_string());
            }
        }
        cache.validate()?;
        if apps.is_empty() {
            return Err(ProfileError::Workload {
                line: 0,
                msg: "no applications listed".into(),
            });
        }
        Ok(WorkloadFile {
            apps,
            cache,
            total_instr,
            comments,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "nr_ways={}", self.cache.nr_ways);
        let _ = writeln!(out, "way_size_mib={}", self.cache.way_size_mib);
        let _ = writeln!(out, "clock_hz={}", self.cache.clock_hz);
        if let Some(bw) = self.cache.peak_bandwidth {
            let _ = writeln!(out, "peak_bandwidth={bw}");
        }
        if let Some(t) = self.total_instr {
            let _ = writeln!(out, "total_instr={t}");
        }
        for a in &self.apps {
            let _ = writeln!(out, "{a}");
        }
        out
    }

    pub fn resolve_profiles(&self, pool: &[AppProfile]) -> Result<WorkloadSpec, ProfileError> {
        let apps = self
            .apps
            .iter()
            .map(|name| {
                pool.iter()
                    .find(|p| p.name() == name)
                    .cloned()
                    .ok_or_else(|| ProfileError::UnknownApp(name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        WorkloadSpec::new(apps, self.cache.clone())
    }

    pub fn resolve_traces(&self, pool: &[PhaseTrace]) -> Result<TraceWorkload, ProfileError> {
        let traces = self
            .apps
            .iter()
            .map(|name| {
                let t = pool
                    .iter()
                    .find(|t| t.name() == name)
                    .cloned()
                    .ok_or_else(|| ProfileError::UnknownApp(name.clone()))?;
                match self.total_instr {
                    Some(total) => t.with_total_instructions(total),
                    None => Ok(t),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        TraceWorkload::new(traces, self.cache.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_for(app: &str, ipc: &[f64]) -> String {
        let mut s = String::new();
        for (i, v) in ipc.iter().enumerate() {
            let _ = writeln!(s, "{app},{},{v},{},0.1", i + 1, 20.0 - i as f64);
        }
        s
    }

    fn header() -> &'static str {
        "app,ways,ipc,llcmpkc,stall_frac\n"
    }

    #[test]
    fn loads_single_app_with_unit_slowdown_at_k() {
        let ipc: Vec<f64> = (1..=11).map(|w| 0.5 + 0.05 * w as f64).collect();
        let src = format!("{}{}", header(), csv_for("lbm", &ipc));
        let profiles = load_profiles(&src, &CacheConfig::default()).unwrap();
        assert_eq!(profiles.len(), 1);
        assert_eq!(profiles[0].slowdown_at(11.0).unwrap(), 1.0);
        assert_eq!(profiles[0].slowdown_table()[10], 1.0);
    }

    #[test]
    fn missing_way_is_reported() {
        let ipc = vec![1.0; 11];
        let body: String = csv_for("lbm", &ipc)
            .lines()
            .filter(|l| !l.starts_with("lbm,7,"))
            .map(|l| format!("{l}\n"))
            .collect();
        let err = load_profiles(&format!("{}{}", header(), body), &CacheConfig::default()).unwrap_err();
        assert_eq!(err.to_string(), "missing way 7 for lbm");
    }

    #[test]
    fn preserves_app_order() {
        let src = format!(
            "{}{}{}",
            header(),
            csv_for("zeta", &[1.0; 11]),
            csv_for("alpha", &[2.0; 11])
        );
        let p = load_profiles(&src, &CacheConfig::default()).unwrap();
        assert_eq!(p.iter().map(|p| p.name()).collect::<Vec<_>>(), ["zeta", "alpha"]);
    }

    #[test]
    fn rejects_bad_rows_with_line_numbers() {
        let cache = CacheConfig::default();
        let src = format!("{}lbm,1,abc,1,0.1\n", header());
        let err = load_profiles(&src, &cache).unwrap_err();
        assert!(matches!(err, ProfileError::Row { line: 2, .. }), "{err}");

        let src = format!("{}lbm,12,1.0,1,0.1\n", header());
        let err = load_profiles(&src, &cache).unwrap_err();
        assert!(err.to_string().contains("outside 1..=11"), "{err}");

        let src = format!("{}lbm,1,0,1,0.1\n", header());
        let err = load_profiles(&src, &cache).unwrap_err();
        assert!(err.to_string().contains("non-positive ipc"), "{err}");

        let src = format!("{}lbm,1,1,1,0.1\nlbm,1,1,1,0.1\n", header());
        let err = load_profiles(&src, &cache).unwrap_err();
        assert!(matches!(err, ProfileError::Row { line: 3, .. }), "{err}");
    }

    #[test]
    fn fewer_ways_than_cache_is_a_mismatch() {
        let src = format!("{}{}", header(), csv_for("lbm", &[1.0; 8]));
        let err = load_profiles(&src, &CacheConfig::default()).unwrap_err();
        assert_eq!(err.to_string(), "missing way 9 for lbm");
    }

    #[test]
    fn fractional_slowdown_interpolates() {
        let mut ipc = vec![2.0; 11];
        ipc[0] = 0.5;
        ipc[1] = 1.0;
        let p = AppProfile::new("x", ipc, vec![1.0; 11], vec![0.0; 11], None).unwrap();
        assert_eq!(p.slowdown_at(2.0).unwrap(), 2.0);
        assert_eq!(p.slowdown_at(3.0).unwrap(), 1.0);
        assert!((p.slowdown_at(2.5).unwrap() - 1.5).abs() < 1e-15);
        assert!(p.slowdown_at(0.5).is_err());
        assert!(p.slowdown_at(11.5).is_err());
        assert!(p.slowdown_at(f64::NAN).is_err());
    }

    #[test]
    fn noisy_ipc_is_clamped() {
        let mut ipc = vec![1.0; 4];
        ipc[1] = 1.1;
        let p = AppProfile::new("x", ipc, vec![1.0; 4], vec![0.0; 4], None).unwrap();
        assert_eq!(p.slowdown_table()[1], 1.0);
        assert_eq!(p.slowdown_at(1.5).unwrap(), 1.0);
    }

    #[test]
    fn table_lookup() {
        let mut llc = vec![10.0; 11];
        llc[0] = 20.0;
        let p = AppProfile::new("x", vec![1.0; 11], llc, vec![0.2; 11], None).unwrap();
        assert_eq!(p.table_at(Metric::Llcmpkc, 1.0).unwrap(), 20.0);
        assert_eq!(p.table_at(Metric::Llcmpkc, 1.5).unwrap(), 15.0);
        assert_eq!(p.table_at(Metric::StallFrac, 3.0).unwrap(), 0.2);
        let err = p.table_at(Metric::Bandwidth, 2.0).unwrap_err();
        assert_eq!(err.to_string(), "metric unavailable: bandwidth");
    }

    #[test]
    fn traces_group_segments() {
        let mut src = String::from("app,segment,duration_instr,ways,ipc,llcmpkc,stall_frac\n");
        for seg in [1u32, 0] {
            for w in 1..=4 {
                let _ = writeln!(src, "foto,{seg},{},{w},1.0,{},0.1", 100 * (seg + 1), 2 + 28 * seg);
            }
        }
        let traces = load_traces(&src, &CacheConfig::with_ways(4)).unwrap();
        assert_eq!(traces.len(), 1);
        let t = &traces[0];
        assert_eq!(t.segments().len(), 2);
        assert_eq!(t.segments()[0].duration_instr, 100);
        assert_eq!(t.segments()[1].profile.llcmpkc()[0], 30.0);
        assert_eq!(t.total_instructions(), 300);
        let again = load_traces(&write_traces(&traces), &CacheConfig::with_ways(4)).unwrap();
        assert_eq!(again, traces);
    }

    #[test]
    fn segment_weights_wrap() {
        let p = AppProfile::new("x", vec![1.0; 2], vec![1.0; 2], vec![0.0; 2], None).unwrap();
        let segs = vec![
            Segment { duration_instr: 10, profile: p.clone() },
            Segment { duration_instr: 5, profile: p },
        ];
        let t = PhaseTrace::new("x", segs, 32).unwrap();
        assert_eq!(t.segment_weights(), vec![22, 10]);
    }

    #[test]
    fn workload_file_roundtrip() {
        let src = "# mix\nnr_ways=11\nway_size_mib=2.5\nclock_hz=2000000000\nlbm\nlbm\napp=xalancbmk\n";
        let wf = WorkloadFile::parse(src).unwrap();
        assert_eq!(wf.apps, ["lbm", "lbm", "xalancbmk"]);
        assert_eq!(wf.cache, CacheConfig::default());
        assert_eq!(WorkloadFile::parse(&wf.render()).unwrap(), wf);
        assert!(WorkloadFile::parse("nr_ways=1\nlbm\n").is_err());
        assert!(WorkloadFile::parse("nr_ways=11\n").is_err());
        assert!(WorkloadFile::parse("bogus=3\nlbm\n").is_err());
    }
}
