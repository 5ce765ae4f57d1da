#![allow(dead_code)]

use cachelab::profiles::{AppProfile, CacheConfig, WorkloadSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Monotone synthetic profile: IPC non-decreasing and misses non-increasing in
/// the way count. `kind` 0 streams, 1 is cache-sensitive, 2 barely uses the
/// cache; anything else is drawn at random.
pub fn synthetic(rng: &mut ChaCha8Rng, name: &str, k: usize, kind: u8) -> AppProfile {
    let kind = if kind > 2 { rng.gen_range(0..3) } else { kind };
    let top: f64 = rng.gen_range(0.4..2.0);
    let (gain, tau, llc_hi, llc_lo): (f64, f64, f64, f64) = match kind {
        0 => (rng.gen_range(0.0..0.02), 1.0, rng.gen_range(15.0..40.0), rng.gen_range(12.0..15.0)),
        1 => (
            rng.gen_range(0.2..1.5),
            rng.gen_range(0.8..4.0),
            rng.gen_range(5.0..20.0),
            rng.gen_range(0.5..4.0),
        ),
        _ => (rng.gen_range(0.0..0.03), 1.0, rng.gen_range(0.2..2.0), 0.1),
    };
    let mut ipc = Vec::with_capacity(k);
    let mut llc = Vec::with_capacity(k);
    for w in 1..=k {
        let decay = (-((w - 1) as f64) / tau).exp();
        ipc.push(top / (1.0 + gain * decay));
        llc.push(llc_lo + (llc_hi - llc_lo) * decay);
    }
    let stall = llc.iter().map(|m| (m / 60.0).min(0.9)).collect();
    AppProfile::new(name, ipc, llc, stall, None).unwrap()
}

pub fn random_workload(seed: u64, n: usize, k: usize) -> WorkloadSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let apps = (0..n).map(|i| synthetic(&mut rng, &format!("app{i}"), k, 9)).collect();
    WorkloadSpec::new(apps, CacheConfig::with_ways(k)).unwrap()
}

/// The 50 seeded workloads shared by the solver and dominance checks.
pub fn oracle_workloads() -> Vec<WorkloadSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..50)
        .map(|i| {
            let n = rng.gen_range(2..=5);
            let k = rng.gen_range(4..=8);
            random_workload(1000 + i, n, k)
        })
        .collect()
}

use cachelab::profiles::{PhaseTrace, Segment, TraceWorkload};

pub const K: usize = 11;

fn profile(name: &str, ipc: &[f64], llc: &[f64], stall: f64) -> AppProfile {
    AppProfile::new(name, ipc.to_vec(), llc.to_vec(), vec![stall; ipc.len()], None).unwrap()
}

/// Streaming: many misses, no benefit from extra ways.
pub fn lbm_like() -> AppProfile {
    profile("lbm", &[0.6; K], &[25.0; K], 0.2)
}

/// Cache-sensitive with a flat tail from 9 ways and critical size 7.
pub fn xalanc_like() -> AppProfile {
    profile(
        "xalancbmk",
        &[0.45, 0.60, 0.72, 0.82, 0.90, 0.96, 1.01, 1.03, 1.05, 1.05, 1.05],
        &[9.0, 7.5, 6.3, 5.4, 4.7, 4.1, 3.7, 3.4, 3.2, 3.1, 3.1],
        0.15,
    )
}

/// Barely touches the cache.
pub fn filler(name: &str, ipc: f64) -> AppProfile {
    profile(name, &[ipc; K], &[0.2; K], 0.05)
}

pub fn fixture_workload() -> WorkloadSpec {
    WorkloadSpec::new(
        vec![lbm_like(), xalanc_like(), filler("povray", 1.5), filler("namd", 1.3)],
        CacheConfig::with_ways(K),
    )
    .unwrap()
}

pub const FOTONIK_BOUNDARY: u64 = 2_000_000_000;

/// Light-sharing start, streaming after `FOTONIK_BOUNDARY` instructions.
pub fn fotonik_like() -> PhaseTrace {
    let light = profile("fotonik3d", &[1.2; K], &[2.0; K], 0.1);
    let stream = profile("fotonik3d", &[0.5; K], &[30.0; K], 0.2);
    PhaseTrace::new(
        "fotonik3d",
        vec![
            Segment {
                duration_instr: FOTONIK_BOUNDARY,
                profile: light,
            },
            Segment {
                duration_instr: 3_000_000_000,
                profile: stream,
            },
        ],
        5_000_000_000,
    )
    .unwrap()
}

pub fn fotonik_workload() -> TraceWorkload {
    let companion = PhaseTrace::stationary(filler("leela", 0.8), 3_000_000_000).unwrap();
    TraceWorkload::new(vec![fotonik_like(), companion], CacheConfig::with_ways(K)).unwrap()
}
