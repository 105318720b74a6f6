//! Randomized concurrent allocate/free workloads and head-first vs
//! non-head-first comparison.
//!
//! A workload is `requests` rounds drawn from one seeded random stream:
//! each round is an allocation (uniform size up to `max_alloc_bytes`) with
//! probability `alloc_probability`, otherwise a free of a uniformly random
//! live allocation. A pool of `workers` threads consumes the stream
//! concurrently; every allocator call serializes on the arena lock. Frees
//! drawn while nothing is live are issued against a null target and count
//! as failed frees.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::allocator::{Allocator, AllocatorConfig, FreeStatus, Mode};
use crate::arena::ArenaError;
use crate::inspector::{self, SnapshotRow};

#[derive(Debug, Clone)]
pub struct WorkloadConfig {
    /// Total number of requests per repetition.
    pub requests: usize,
    pub max_alloc_bytes: usize,
    pub alloc_probability: f64,
    /// Concurrent request issuers sharing one request stream.
    pub workers: usize,
    pub seed: u64,
    pub repetitions: usize,
    /// Arena settings; the mode field is overridden by `run_workload`.
    pub arena: AllocatorConfig,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            requests: 10_000,
            max_alloc_bytes: 1024,
            alloc_probability: 0.5,
            workers: 1,
            seed: 0,
            repetitions: 5,
            arena: AllocatorConfig::default(),
        }
    }
}

/// One live allocation in the shared registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiveAlloc {
    pub addr: u64,
    pub owner: u32,
}

/// One request drawn from the stream. A `Free` carries the index of the
/// chosen registry entry, or `None` when the registry is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Request {
    Alloc { size: usize },
    Free { target_index: Option<usize> },
}

/// Draws the next request from the stream.
pub fn generate_request<R: Rng>(
    rng: &mut R,
    config: &WorkloadConfig,
    live: &[LiveAlloc],
) -> Request {
    if rng.gen_bool(config.alloc_probability) {
        Request::Alloc { size: rng.gen_range(1..=config.max_alloc_bytes) }
    } else if live.is_empty() {
        Request::Free { target_index: None }
    } else {
        Request::Free { target_index: Some(rng.gen_range(0..live.len())) }
    }
}

/// Raw counters and end-state metrics of one repetition.
#[derive(Debug, Clone)]
pub struct RepetitionStats {
    pub wall_time_seconds: f64,
    pub allocs_attempted: usize,
    pub allocs_ok: usize,
    pub frees_attempted: usize,
    pub frees_ok: usize,
    pub external_fragmentation: usize,
    pub final_state: Vec<SnapshotRow>,
}

impl RepetitionStats {
    pub fn malloc_success_pct(&self) -> f64 {
        pct(self.allocs_ok, self.allocs_attempted)
    }

    pub fn free_success_pct(&self) -> f64 {
        pct(self.frees_ok, self.frees_attempted)
    }
}

fn pct(ok: usize, attempted: usize) -> f64 {
    if attempted == 0 {
        100.0
    } else {
        100.0 * ok as f64 / attempted as f64
    }
}

/// Aggregated result of one (mode, request count) experiment.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub mode: Mode,
    pub requests: usize,
    /// Mean wall time over repetitions.
    pub wall_time_seconds: f64,
    pub malloc_success_pct: f64,
    pub free_success_pct: f64,
    /// Mean end-state external fragmentation over repetitions.
    pub external_fragmentation_bytes: f64,
    pub repetitions: Vec<RepetitionStats>,
}

/// Paired result for one request count.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub requests: usize,
    pub non_head_first: BenchReport,
    pub head_first: BenchReport,
    /// `100 * (t_nhf - t_hf) / t_nhf`.
    pub t_imp_pct: f64,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub mean_t_imp_pct: f64,
    /// Improvement computed from summed times instead of per-row means.
    pub total_time_ratio_pct: f64,
}

fn validate(config: &WorkloadConfig) -> Result<(), ArenaError> {
    if config.requests < 1 {
        return Err(ArenaError::Config("requests must be at least 1".into()));
    }
    if config.max_alloc_bytes < 1 {
        return Err(ArenaError::Config("max_alloc_bytes must be at least 1".into()));
    }
    if !(config.alloc_probability > 0.0 && config.alloc_probability < 1.0) {
        return Err(ArenaError::Config("alloc_probability must be in (0, 1)".into()));
    }
    if config.workers < 1 {
        return Err(ArenaError::Config("workers must be at least 1".into()));
    }
    if config.repetitions < 1 {
        return Err(ArenaError::Config("repetitions must be at least 1".into()));
    }
    Ok(())
}

enum Action {
    Alloc(usize),
    Free(Option<LiveAlloc>),
}

fn run_repetition(mode: Mode, config: &WorkloadConfig, seed: u64) -> Result<RepetitionStats, ArenaError> {
    let allocator = Allocator::new(AllocatorConfig { mode, ..config.arena.clone() })?;
    let stream: Mutex<(ChaCha8Rng, Vec<LiveAlloc>)> =
        Mutex::new((ChaCha8Rng::seed_from_u64(seed), Vec::new()));
    let issued = AtomicUsize::new(0);
    let n = config.requests;

    let start = Instant::now();
    let totals = thread::scope(|s| {
        let handles: Vec<_> = (0..config.workers)
            .map(|w| {
                let allocator = &allocator;
                let stream = &stream;
                let issued = &issued;
                s.spawn(move || {
                    let owner = w as u32 + 1;
                    let mut local = (0usize, 0usize, 0usize, 0usize);
                    loop {
                        if issued.fetch_add(1, Ordering::Relaxed) >= n {
                            break;
                        }
                        // Draw the request and, for frees, reserve the target
                        // under the stream lock so no two workers race for it.
                        let action = {
                            let mut guard = stream.lock().unwrap();
                            let (rng, live) = &mut *guard;
                            match generate_request(rng, config, live) {
                                Request::Alloc { size } => Action::Alloc(size),
                                Request::Free { target_index } => {
                                    Action::Free(target_index.map(|i| live.swap_remove(i)))
                                }
                            }
                        };
                        match action {
                            Action::Alloc(size) => {
                                local.0 += 1;
                                let r = allocator.create(size, owner);
                                if let Some(addr) = r.user_addr {
                                    local.1 += 1;
                                    stream.lock().unwrap().1.push(LiveAlloc { addr, owner });
                                }
                            }
                            Action::Free(target) => {
                                local.2 += 1;
                                let status = allocator.free(
                                    target.map(|t| t.addr),
                                    target.map(|t| t.owner).unwrap_or(owner),
                                    false,
                                );
                                if status == FreeStatus::Freed {
                                    local.3 += 1;
                                }
                            }
                        }
                    }
                    local
                })
            })
            .collect();
        handles.into_iter().fold((0, 0, 0, 0), |acc, h| {
            let l = h.join().expect("worker panicked");
            (acc.0 + l.0, acc.1 + l.1, acc.2 + l.2, acc.3 + l.3)
        })
    });
    let wall_time_seconds = start.elapsed().as_secs_f64();

    let arena = allocator.arena();
    let frag = inspector::fragmentation(&arena);
    let final_state = inspector::snapshot(&arena)?;
    Ok(RepetitionStats {
        wall_time_seconds,
        allocs_attempted: totals.0,
        allocs_ok: totals.1,
        frees_attempted: totals.2,
        frees_ok: totals.3,
        external_fragmentation: frag.external_fragmentation,
        final_state,
    })
}

/// Runs the configured workload in the given mode, one fresh arena per
/// repetition, and aggregates the repetitions.
pub fn run_workload(mode: Mode, config: &WorkloadConfig) -> Result<BenchReport, ArenaError> {
    validate(config)?;
    let mut reps = Vec::with_capacity(config.repetitions);
    for r in 0..config.repetitions {
        reps.push(run_repetition(mode, config, config.seed.wrapping_add(r as u64))?);
    }
    let k = reps.len() as f64;
    let mean = |f: &dyn Fn(&RepetitionStats) -> f64| reps.iter().map(|r| f(r)).sum::<f64>() / k;
    Ok(BenchReport {
        mode,
        requests: config.requests,
        wall_time_seconds: mean(&|r| r.wall_time_seconds),
        malloc_success_pct: mean(&|r| r.malloc_success_pct()),
        free_success_pct: mean(&|r| r.free_success_pct()),
        external_fragmentation_bytes: mean(&|r| r.external_fragmentation as f64),
        repetitions: reps,
    })
}

/// Runs both modes at each request count with identical seeds and computes
/// the per-row and aggregate time improvements.
pub fn compare_modes(
    config: &WorkloadConfig,
    request_counts: &[usize],
) -> Result<ComparisonReport, ArenaError> {
    let mut rows = Vec::with_capacity(request_counts.len());
    let mut sum_nhf = 0.0;
    let mut sum_hf = 0.0;
    for &n in request_counts {
        let cfg = WorkloadConfig { requests: n, ..config.clone() };
        let nhf = run_workload(Mode::NonHeadFirst, &cfg)?;
        let hf = run_workload(Mode::HeadFirst, &cfg)?;
        let t_imp_pct =
            100.0 * (nhf.wall_time_seconds - hf.wall_time_seconds) / nhf.wall_time_seconds;
        sum_nhf += nhf.wall_time_seconds;
        sum_hf += hf.wall_time_seconds;
        rows.push(ComparisonRow { requests: n, non_head_first: nhf, head_first: hf, t_imp_pct });
    }
    let mean_t_imp_pct = rows.iter().map(|r| r.t_imp_pct).sum::<f64>() / rows.len() as f64;
    Ok(ComparisonReport {
        rows,
        mean_t_imp_pct,
        total_time_ratio_pct: 100.0 * (sum_nhf - sum_hf) / sum_nhf,
    })
}

pub const BENCH_CSV_HEADER: &str = "mode,requests,t_sec,malloc_pct,free_pct,ext_frag";
pub const COMPARISON_CSV_HEADER: &str = "mode,requests,t_sec,malloc_pct,free_pct,ext_frag,t_imp_pct";

pub fn bench_csv_row(r: &BenchReport) -> String {
    format!(
        "{},{},{:.6},{:.2},{:.2},{:.2}",
        r.mode,
        r.requests,
        r.wall_time_seconds,
        r.malloc_success_pct,
        r.free_success_pct,
        r.external_fragmentation_bytes
    )
}

/// Comparison CSV: the non-head-first row leaves `t_imp_pct` empty, the
/// head-first row carries the pair's value.
pub fn comparison_csv(report: &ComparisonReport) -> String {
    let mut out = String::from(COMPARISON_CSV_HEADER);
    out.push('\n');
    for row in &report.rows {
        out.push_str(&bench_csv_row(&row.non_head_first));
        out.push_str(",\n");
        out.push_str(&bench_csv_row(&row.head_first));
        out.push_str(&format!(",{:.2}\n", row.t_imp_pct));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::InitLayout;

    fn tiny_config() -> WorkloadConfig {
        WorkloadConfig {
            requests: 500,
            max_alloc_bytes: 64,
            workers: 1,
            seed: 42,
            repetitions: 2,
            arena: AllocatorConfig {
                capacity: 4096,
                layout: InitLayout::SingleBlock,
                ..AllocatorConfig::default()
            },
            ..WorkloadConfig::default()
        }
    }

    #[test]
    fn single_worker_runs_are_deterministic() {
        let cfg = tiny_config();
        let a = run_workload(Mode::NonHeadFirst, &cfg).unwrap();
        let b = run_workload(Mode::NonHeadFirst, &cfg).unwrap();
        for (ra, rb) in a.repetitions.iter().zip(&b.repetitions) {
            assert_eq!(ra.allocs_attempted, rb.allocs_attempted);
            assert_eq!(ra.allocs_ok, rb.allocs_ok);
            assert_eq!(ra.frees_attempted, rb.frees_attempted);
            assert_eq!(ra.frees_ok, rb.frees_ok);
            assert_eq!(ra.final_state, rb.final_state);
        }
    }

    #[test]
    fn accounting_is_exact() {
        let cfg = tiny_config();
        let report = run_workload(Mode::HeadFirst, &cfg).unwrap();
        for rep in &report.repetitions {
            assert_eq!(rep.allocs_attempted + rep.frees_attempted, cfg.requests);
            assert!(rep.allocs_ok <= rep.allocs_attempted);
            assert!(rep.frees_ok <= rep.frees_attempted);
        }
    }

    #[test]
    fn free_against_empty_registry_is_null_and_fails() {
        use rand::SeedableRng;
        let cfg = WorkloadConfig { alloc_probability: 0.01, ..tiny_config() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut saw_free = false;
        for _ in 0..100 {
            if let Request::Free { target_index } = generate_request(&mut rng, &cfg, &[]) {
                assert_eq!(target_index, None);
                saw_free = true;
            }
        }
        assert!(saw_free);

        // driven through the workload, those null frees count as failures
        let report = run_workload(Mode::NonHeadFirst, &cfg).unwrap();
        let rep = &report.repetitions[0];
        assert!(rep.frees_ok < rep.frees_attempted);
    }

    #[test]
    fn alloc_free_split_is_balanced_at_half() {
        use rand::SeedableRng;
        let cfg = WorkloadConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let live = [LiveAlloc { addr: 16, owner: 1 }];
        let allocs = (0..draws)
            .filter(|_| matches!(generate_request(&mut rng, &cfg, &live), Request::Alloc { .. }))
            .count();
        let frac = allocs as f64 / draws as f64;
        assert!((frac - 0.5).abs() < 0.01, "alloc fraction {frac}");
    }

    #[test]
    fn alloc_sizes_stay_in_range() {
        use rand::SeedableRng;
        let cfg = WorkloadConfig { max_alloc_bytes: 100, ..WorkloadConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            if let Request::Alloc { size } = generate_request(&mut rng, &cfg, &[]) {
                assert!((1..=100).contains(&size));
            }
        }
    }

    #[test]
    fn invalid_config_is_rejected_before_timing() {
        let cfg = WorkloadConfig { requests: 0, ..tiny_config() };
        assert!(run_workload(Mode::HeadFirst, &cfg).is_err());
        let cfg = WorkloadConfig { alloc_probability: 1.0, ..tiny_config() };
        assert!(run_workload(Mode::HeadFirst, &cfg).is_err());
        let cfg = WorkloadConfig {
            arena: AllocatorConfig { capacity: 24, ..AllocatorConfig::default() },
            ..tiny_config()
        };
        assert!(run_workload(Mode::HeadFirst, &cfg).is_err());
    }

    #[test]
    fn comparison_rows_are_computed_from_paired_reports() {
        let cfg = WorkloadConfig { repetitions: 1, ..tiny_config() };
        let report = compare_modes(&cfg, &[200, 400]).unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            let expect = 100.0
                * (row.non_head_first.wall_time_seconds - row.head_first.wall_time_seconds)
                / row.non_head_first.wall_time_seconds;
            assert!((row.t_imp_pct - expect).abs() < 1e-9);
        }
        let csv = comparison_csv(&report);
        assert_eq!(csv.lines().count(), 1 + 2 * 2);
    }
}
