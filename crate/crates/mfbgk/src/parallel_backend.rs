//! Data-parallel execution contract: deterministic parallel maps over
//! particles and phase-space rows, plus per-phase wall-clock accounting.
//!
//! Every kernel writes only the slot (or row) handed to it and performs its
//! inner reductions in fixed ascending order, so phase output is bitwise
//! identical for any worker count. Cross-worker floating-point reductions
//! are never used; per-particle moments belong to the particle's own slot.

use crate::error::{Error, Result};
use rayon::prelude::*;
use std::time::{Duration, Instant};

/// Phase labels used by the profiling harness.
pub mod labels {
    pub const NEIGHBOR_SEARCH: &str = "Neighbor Search";
    pub const PARTICLE_ORGANIZATION: &str = "Particle Organization";
    pub const SPATIAL_DERIVATIVE: &str = "Spatial Derivative Approximation";
    pub const UPDATE_MOMENT: &str = "Update Moment";
    pub const UPDATE_FUNCTION: &str = "Update Function";
    pub const BOUNDARY_INTERPOLATION: &str = "Interpolate Distribution Function on Boundary";
    pub const BOUNDARY_REFLECTION: &str = "Diffusive reflection Boundary Condition";

    pub const ALL: [&str; 7] = [
        NEIGHBOR_SEARCH,
        PARTICLE_ORGANIZATION,
        SPATIAL_DERIVATIVE,
        UPDATE_MOMENT,
        UPDATE_FUNCTION,
        BOUNDARY_INTERPOLATION,
        BOUNDARY_REFLECTION,
    ];
}

/// A fixed-size worker pool; the whole solver runs inside it.
pub struct Backend {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend")
            .field("workers", &self.workers)
            .finish()
    }
}

/// Hardware parallelism, the default worker count.
pub fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

impl Backend {
    /// `workers == 0` selects the hardware default.
    pub fn new(workers: usize) -> Result<Self> {
        let workers = if workers == 0 {
            default_workers()
        } else {
            workers
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidParam(format!("worker pool: {e}")))?;
        Ok(Self { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Parallel map over particle slots: `kernel(i, &mut out[i])`.
    pub fn map_particles<T, F>(&self, out: &mut [T], kernel: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync,
    {
        self.pool.install(|| {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(i, slot)| kernel(i, slot));
        });
    }

    /// Fallible parallel map; returns the error of the lowest particle index
    /// so failures are deterministic under any schedule.
    pub fn try_map_particles<T, F>(&self, out: &mut [T], kernel: F) -> Result<()>
    where
        T: Send,
        F: Fn(usize, &mut T) -> Result<()> + Sync,
    {
        let failures = std::sync::Mutex::new(Vec::new());
        self.pool.install(|| {
            out.par_iter_mut().enumerate().for_each(|(i, slot)| {
                if let Err(e) = kernel(i, slot) {
                    failures.lock().unwrap().push((i, e));
                }
            });
        });
        let mut failures = failures.into_inner().unwrap();
        failures.sort_by_key(|(i, _)| *i);
        match failures.into_iter().next() {
            Some((_, e)) => Err(e),
            None => Ok(()),
        }
    }

    /// Parallel map over the phase-space rows of one buffer:
    /// `kernel(particle, &mut row)` with `row.len() == row_len`.
    pub fn map_rows<F>(&self, data: &mut [f64], row_len: usize, kernel: F)
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        self.pool.install(|| {
            data.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| kernel(i, row));
        });
    }

    /// Like `map_rows` with a per-worker scratch value (reused across rows,
    /// fully overwritten by the kernel; it never leaks state between rows).
    pub fn map_rows_with_scratch<S, I, F>(&self, data: &mut [f64], row_len: usize, init: I, kernel: F)
    where
        S: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(usize, &mut [f64], &mut S) + Sync,
    {
        self.pool.install(|| {
            data.par_chunks_mut(row_len)
                .enumerate()
                .for_each_init(&init, |scratch, (i, row)| kernel(i, row, scratch));
        });
    }

    /// Parallel map over paired rows of two same-shaped buffers (the reduced
    /// model updates g1 and g2 together).
    pub fn map_rows2<F>(&self, a: &mut [f64], b: &mut [f64], row_len: usize, kernel: F)
    where
        F: Fn(usize, &mut [f64], &mut [f64]) + Sync,
    {
        assert_eq!(a.len(), b.len());
        self.pool.install(|| {
            a.par_chunks_mut(row_len)
                .zip(b.par_chunks_mut(row_len))
                .enumerate()
                .for_each(|(i, (ra, rb))| kernel(i, ra, rb));
        });
    }

    pub fn map_rows2_with_scratch<S, I, F>(
        &self,
        a: &mut [f64],
        b: &mut [f64],
        row_len: usize,
        init: I,
        kernel: F,
    ) where
        S: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(usize, &mut [f64], &mut [f64], &mut S) + Sync,
    {
        assert_eq!(a.len(), b.len());
        self.pool.install(|| {
            a.par_chunks_mut(row_len)
                .zip(b.par_chunks_mut(row_len))
                .enumerate()
                .for_each_init(&init, |scratch, (i, (ra, rb))| kernel(i, ra, rb, scratch));
        });
    }

    /// Deterministic parallel fold: map each index to a value, then reduce
    /// serially in ascending order.
    pub fn map_collect<T, F>(&self, n: usize, kernel: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        self.pool
            .install(|| (0..n).into_par_iter().map(|i| kernel(i)).collect())
    }
}

/// Measure one execution of `thunk`.
pub fn phase_timer<R>(label: &str, thunk: impl FnOnce() -> R) -> (R, Duration) {
    let start = Instant::now();
    let out = thunk();
    let elapsed = start.elapsed();
    let _ = label;
    (out, elapsed)
}

/// Wall-clock accumulated per phase label across steps.
#[derive(Debug, Clone, Default)]
pub struct PhaseTimings {
    entries: Vec<(&'static str, Duration)>,
}

impl PhaseTimings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn time<R>(&mut self, label: &'static str, thunk: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = thunk();
        self.add(label, start.elapsed());
        out
    }

    pub fn add(&mut self, label: &'static str, d: Duration) {
        match self.entries.iter_mut().find(|(l, _)| *l == label) {
            Some((_, acc)) => *acc += d,
            None => self.entries.push((label, d)),
        }
    }

    pub fn get(&self, label: &str) -> Duration {
        self.entries
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, d)| *d)
            .unwrap_or_default()
    }

    pub fn entries(&self) -> &[(&'static str, Duration)] {
        &self.entries
    }

    pub fn total(&self) -> Duration {
        self.entries.iter().map(|(_, d)| *d).sum()
    }

    /// Percentage share per label; empty when nothing was timed.
    pub fn shares(&self) -> Vec<(&'static str, f64)> {
        let total = self.total().as_secs_f64();
        if total <= 0.0 {
            return Vec::new();
        }
        self.entries
            .iter()
            .map(|(l, d)| (*l, 100.0 * d.as_secs_f64() / total))
            .collect()
    }
}
