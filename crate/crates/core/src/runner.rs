//! End-to-end benchmark run: trace → plan → execute → drain → report.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::engine::{
    simulate, DrainTimeout, EngineConfig, EngineError, ParallelismMap, RoutingMode, RunningTopology, SimOptions,
};
use crate::generator::{generate_with, replay, ArrivalPattern, ReplayError, ReplayOptions, ReplayStats, Trace};
use crate::metrics::{
    finalize, CpuSampler, CpuScope, CpuSeries, LatencySample, MetricsCollector, ReportParams, RunMetadata, RunReport,
};
use crate::planner::min_parallelism;
use crate::workloads::WorkloadSpec;

#[derive(Debug, Clone, PartialEq)]
pub enum ParallelismChoice {
    /// Planner output at the workload's (or overridden) headroom.
    Auto,
    /// Planner output with every count halved.
    HalfPlan,
    Explicit(ParallelismMap),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    /// Replay speed-up; offsets and report buckets are divided by it.
    pub time_scale: f64,
    /// Multiplier on every profile rate.
    pub rate_scale: f64,
    /// Profile time (seconds) at which the run starts.
    pub start_at_s: f64,
    /// Longest stretch of profile time (seconds) to run.
    pub duration_cap_s: Option<f64>,
    pub parallelism: ParallelismChoice,
    pub headroom: Option<f64>,
    pub routing: Option<RoutingMode>,
    pub arrivals: ArrivalPattern,
    /// Deterministic simulation instead of threads and wall-clock replay.
    pub sim: bool,
    pub queue_capacity: usize,
    pub drain_timeout: Duration,
    /// `None` disables sampling.
    pub cpu_scope: Option<CpuScope>,
    pub cpu_interval: Duration,
    /// Maximum lateness before replay gives up.
    pub stall_budget: Duration,
    /// Pre-generated trace; overrides generation from the profile.
    pub trace: Option<Trace>,
    /// Sampling interval of the in-flight series.
    pub depth_interval: Duration,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            time_scale: 1.0,
            rate_scale: 1.0,
            start_at_s: 0.0,
            duration_cap_s: None,
            parallelism: ParallelismChoice::Auto,
            headroom: None,
            routing: None,
            arrivals: ArrivalPattern::Even,
            sim: false,
            queue_capacity: 10_000,
            drain_timeout: Duration::from_secs(120),
            cpu_scope: Some(CpuScope::Process),
            cpu_interval: Duration::from_secs(1),
            stall_budget: Duration::from_secs(60),
            trace: None,
            depth_interval: Duration::from_millis(100),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Drain(#[from] DrainTimeout),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

impl RunError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Engine(_) => 2,
            RunError::Drain(_) | RunError::Replay(_) => 3,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub parallelism: ParallelismMap,
    pub trace_hash: String,
    /// Events injected but not terminated when the last event was injected.
    pub backlog_at_injection_end: u64,
    /// `(seconds, events in flight)` at `depth_interval` steps.
    pub depth_series: Vec<(f64, u64)>,
    pub replay: Option<ReplayStats>,
    /// Samples the collector refused (duplicates or reversed clocks).
    pub rejected_samples: u64,
}

/// The profile the run replays: rate-scaled, then windowed.
pub fn run_profile(workload: &WorkloadSpec, cfg: &RunConfig) -> Result<crate::RateProfile, RunError> {
    let scaled = workload.rate_profile.scale_rate(cfg.rate_scale).map_err(|e| RunError::Config(e.to_string()))?;
    let span = scaled.span();
    let end = cfg.duration_cap_s.map_or(span, |d| (cfg.start_at_s + d).min(span));
    if cfg.start_at_s < 0.0 || cfg.start_at_s >= span {
        return Err(RunError::Config(format!("start {} s outside the profile span [0, {span})", cfg.start_at_s)));
    }
    Ok(scaled.window(cfg.start_at_s, end))
}

/// Parallelism for the run, validated against the topology.
pub fn resolve_parallelism(workload: &WorkloadSpec, cfg: &RunConfig) -> Result<ParallelismMap, RunError> {
    let planned = || {
        let mut input = workload.plan_input(cfg.rate_scale);
        if let Some(h) = cfg.headroom {
            input.headroom = h;
        }
        min_parallelism(&workload.topology, &input)
    };
    let par = match &cfg.parallelism {
        ParallelismChoice::Auto => planned(),
        ParallelismChoice::HalfPlan => planned().halved(),
        ParallelismChoice::Explicit(p) => p.clone(),
    };
    let violations = par.violations(&workload.topology);
    if violations.is_empty() {
        Ok(par)
    } else {
        Err(RunError::Config(violations.join("; ")))
    }
}

/// In-flight count at each instant `t`: arrived at or before `t`, not yet
/// departed.
fn in_flight_at(ingress: &[u64], egress: &[u64], t: u64) -> u64 {
    let arrived = ingress.partition_point(|&x| x <= t);
    let departed = egress.partition_point(|&x| x <= t);
    arrived.saturating_sub(departed) as u64
}

fn backlog_profile(samples: &[LatencySample], interval: Duration) -> (u64, Vec<(f64, u64)>) {
    let mut ingress: Vec<u64> = samples.iter().map(|s| s.ingress_us).collect();
    let mut egress: Vec<u64> = samples.iter().map(|s| s.egress_us).collect();
    ingress.sort_unstable();
    egress.sort_unstable();
    let Some(&last_in) = ingress.last() else {
        return (0, Vec::new());
    };
    let backlog = in_flight_at(&ingress, &egress, last_in);
    let end = egress.last().copied().unwrap_or(last_in);
    let step = (interval.as_micros() as u64).max(1);
    let series = (0..=end / step)
        .map(|k| {
            let t = k * step;
            (t as f64 / 1e6, in_flight_at(&ingress, &egress, t))
        })
        .collect();
    (backlog, series)
}

/// Runs `workload` end to end and returns the finalized report.
pub fn run(workload: &WorkloadSpec, cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    if !(cfg.time_scale > 0.0) || !cfg.time_scale.is_finite() {
        return Err(RunError::Config(format!("time scale must be positive, got {}", cfg.time_scale)));
    }
    let profile = run_profile(workload, cfg)?;
    let trace = match &cfg.trace {
        Some(t) => {
            for w in t.digest_warnings(&profile, &workload.size_histogram) {
                log::warn!("{w}");
            }
            t.clone()
        }
        None => generate_with(&profile, &workload.size_histogram, cfg.seed, cfg.arrivals)
            .map_err(|e| RunError::Config(e.to_string()))?,
    };
    let par = resolve_parallelism(workload, cfg)?;
    let routing = cfg.routing.unwrap_or(workload.routing);
    let graph = workload.topology.compile().map_err(|e| RunError::Config(e.to_string()))?;
    log::info!("running {} events with parallelism {par} ({} threads)", trace.len(), par.total());

    let span_s = if cfg.trace.is_some() {
        (trace.last_offset_ms() as f64 / 1000.0).max(profile.span())
    } else {
        profile.span()
    } / cfg.time_scale;
    let bucket_s = workload.bucket_seconds() / cfg.time_scale;
    let params = ReportParams::new(workload.sla_ms, bucket_s, span_s);

    let mut collector = MetricsCollector::new();
    let (cpu, replay_stats) = if cfg.sim {
        let opts = SimOptions { routing, seed: cfg.seed, time_scale: cfg.time_scale, record_paths: false };
        let out = simulate(&graph, &par, &trace, &opts)?;
        collector.extend(out.samples);
        (CpuSeries::Unavailable("deterministic simulation".into()), None)
    } else {
        let engine_cfg = EngineConfig {
            routing,
            seed: cfg.seed,
            queue_capacity: cfg.queue_capacity,
            drain_timeout: cfg.drain_timeout,
            materialize_payloads: true,
            record_paths: false,
        };
        let topo = RunningTopology::start(&graph, &par, &engine_cfg)?;
        let clock = topo.clock();
        let sampler = cfg.cpu_scope.map(|scope| CpuSampler::start(cfg.cpu_interval, scope));
        let origin = Instant::now();
        let replay_opts = ReplayOptions { time_scale: cfg.time_scale, workers: 1, stall_budget: cfg.stall_budget };
        let replayed = replay(&trace, &replay_opts, |rec, now| {
            if let Err(e) = topo.inject(rec, now) {
                log::warn!("event {}: {e}", rec.id);
            }
        });
        let drained = topo.drain();
        let cpu = sampler.map_or_else(|| CpuSeries::Unavailable("sampling disabled".into()), CpuSampler::stop);
        let stats = replayed?;
        let drained = drained?;
        // report time starts at the replay origin, not at engine start
        let offset_us = origin.saturating_duration_since(clock).as_micros() as u64;
        collector.extend(drained.samples.into_iter().map(|mut s| {
            s.ingress_us = s.ingress_us.saturating_sub(offset_us);
            s.egress_us = s.egress_us.saturating_sub(offset_us);
            s
        }));
        (cpu, Some(stats))
    };

    let rejected_samples = collector.rejected();
    let samples = collector.into_samples();
    let (backlog, depth_series) = backlog_profile(&samples, cfg.depth_interval);
    let mut report = finalize(samples, &params);
    report.cpu = cpu;
    report.metadata = RunMetadata {
        workload: workload.name.clone(),
        workload_digest: workload.digest(),
        mode: if cfg.sim { "sim" } else { "threaded" }.into(),
        seed: cfg.seed,
        routing: routing.to_string(),
        time_scale: cfg.time_scale,
        rate_scale: cfg.rate_scale,
        parallelism: par.to_string(),
        threads: par.total(),
    };
    Ok(RunOutcome {
        report,
        parallelism: par,
        trace_hash: trace.content_hash(),
        backlog_at_injection_end: backlog,
        depth_series,
        replay: replay_stats,
        rejected_samples,
    })
}
