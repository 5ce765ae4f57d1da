//! Way-partitioning laboratory for a shared last-level cache.
//!
//! * [`profiles`]: per-way performance tables, phase traces and their file formats.
//! * [`metrics`]: cluster assignments, the in-cluster sharing model, unfairness and STP.
//! * [`policies`]: application classes, lookahead and the LFOC clustering algorithm.
//! * [`optimal`]: search-space counting and the exact solver.
//! * [`dynsim`]: online simulation with sampling and phase-change detection.
//! * [`experiment`]: workload generation, experiment grids and reports.

pub mod dynsim;
pub mod experiment;
pub mod metrics;
pub mod optimal;
pub mod policies;
pub mod profiles;

pub use metrics::{evaluate, BandwidthModel, ClusterAssignment, EvalResult};
pub use policies::{classify, lfoc_partition, AppClass, ClassSets, LfocParams};
pub use profiles::{AppProfile, CacheConfig, PhaseTrace, TraceWorkload, WorkloadSpec};
