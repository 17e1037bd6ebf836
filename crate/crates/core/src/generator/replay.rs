//! Wall-clock replay of a pre-generated trace.
//!
//! Event `i` is due at `start + offset_i / time_scale`. Emitter workers take
//! events round-robin from the sorted trace, wait for each deadline with a
//! coarse sleep plus short spin, then hand the record to the consumer along
//! with the actual emission instant. Ordering is guaranteed per worker; use
//! one worker for strict global order.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{EventRecord, Trace};
use crate::clock::{set_fine_timer_slack, wait_until};

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    /// Values above 1 speed replay up, below 1 slow it down.
    pub time_scale: f64,
    pub workers: usize,
    /// Maximum tolerated lateness of any emission before replay aborts.
    pub stall_budget: Duration,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self { time_scale: 1.0, workers: 1, stall_budget: Duration::from_secs(30) }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReplayStats {
    pub emitted: u64,
    /// Emission minus deadline per event, in microseconds, indexed by event
    /// position in the trace.
    pub scheduling_error_us: Vec<i64>,
    /// Wall time between the replay start and the last emission.
    pub span: Duration,
}

impl ReplayStats {
    /// Nearest-rank percentile of absolute scheduling error, in ms.
    pub fn abs_error_percentile_ms(&self, pct: f64) -> f64 {
        let mut v: Vec<u64> = self.scheduling_error_us.iter().map(|e| e.unsigned_abs()).collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_unstable();
        let rank = ((pct / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
        v[rank.min(v.len()) - 1] as f64 / 1000.0
    }

    pub fn max_abs_error_ms(&self) -> f64 {
        self.scheduling_error_us.iter().map(|e| e.unsigned_abs()).max().unwrap_or(0) as f64 / 1000.0
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("time scale must be positive, got {0}")]
    BadTimeScale(f64),
    #[error(
        "replay stalled: event {event_id} was {lateness:?} late (budget {budget:?}); \
         {emitted} events emitted before abort"
    )]
    Stalled { event_id: u64, lateness: Duration, budget: Duration, emitted: u64 },
}

/// Replays `trace` in real time, calling `emit` once per event.
pub fn replay<F>(trace: &Trace, opts: &ReplayOptions, emit: F) -> Result<ReplayStats, ReplayError>
where
    F: Fn(&EventRecord, Instant) + Sync,
{
    if !(opts.time_scale > 0.0) || !opts.time_scale.is_finite() {
        return Err(ReplayError::BadTimeScale(opts.time_scale));
    }
    let workers = opts.workers.max(1);
    let abort = AtomicBool::new(false);
    let start = Instant::now();
    let deadline = |r: &EventRecord| {
        start + Duration::from_secs_f64(r.offset_ms as f64 / 1000.0 / opts.time_scale)
    };

    let run_worker = |w: usize| -> Result<(Vec<(usize, i64)>, Instant, u64), ReplayError> {
        set_fine_timer_slack();
        let mut errors = Vec::with_capacity(trace.len() / workers + 1);
        let mut last = start;
        let mut emitted = 0u64;
        for (i, rec) in trace.records.iter().enumerate().skip(w).step_by(workers) {
            if abort.load(Ordering::Relaxed) {
                break;
            }
            let due = deadline(rec);
            wait_until(due);
            let now = Instant::now();
            let lateness = now - due;
            if lateness > opts.stall_budget {
                abort.store(true, Ordering::Relaxed);
                return Err(ReplayError::Stalled {
                    event_id: rec.id,
                    lateness,
                    budget: opts.stall_budget,
                    emitted,
                });
            }
            emit(rec, now);
            emitted += 1;
            errors.push((i, lateness.as_micros() as i64));
            last = now;
        }
        Ok((errors, last, emitted))
    };

    let results: Vec<_> = if workers == 1 {
        vec![run_worker(0)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers).map(|w| s.spawn(move || run_worker(w))).collect();
            handles.into_iter().map(|h| h.join().expect("emitter panicked")).collect()
        })
    };

    let mut stats = ReplayStats { scheduling_error_us: vec![0; trace.len()], ..Default::default() };
    let mut last = start;
    let mut stalled = None;
    for r in results {
        match r {
            Ok((errors, l, emitted)) => {
                stats.emitted += emitted;
                last = last.max(l);
                for (i, e) in errors {
                    stats.scheduling_error_us[i] = e;
                }
            }
            Err(e) => {
                if let ReplayError::Stalled { emitted, .. } = &e {
                    stats.emitted += emitted;
                }
                stalled.get_or_insert(e);
            }
        }
    }
    if let Some(mut e) = stalled {
        if let ReplayError::Stalled { emitted, .. } = &mut e {
            *emitted = stats.emitted;
        }
        return Err(e);
    }
    stats.span = last - start;
    Ok(stats)
}
