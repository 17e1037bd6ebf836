use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use streambench::generator::{generate_with, read_trace, write_trace, ArrivalPattern};
use streambench::metrics::{export, verify_report, CpuScope, VerifyError};
use streambench::planner::plan;
use streambench::runner::{run, run_profile, ParallelismChoice, RunConfig, RunError};
use streambench::{ParallelismMap, RoutingMode, WorkloadSpec};

const EXIT_CONFIG: u8 = 2;
const EXIT_DRAIN: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(name = "bench", version, about = "Stream-processing benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an event trace from a workload's rate and size profiles.
    Gen(GenArgs),
    /// Print the planned per-task parallelism.
    Plan(PlanArgs),
    /// Run a workload end to end and write a report.
    Run(RunArgs),
    /// Recount a report's raw samples and check its summaries.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct WorkloadArgs {
    /// Builtin workload name or path to a workload file.
    #[arg(long, env = "BENCH_WORKLOAD")]
    workload: String,
    /// Override a workload parameter, e.g. `additional_checks_pass=0`.
    #[arg(long = "set", value_name = "NAME=VALUE", value_parser = parse_assignment)]
    set: Vec<(String, f64)>,
}

#[derive(Args)]
struct ProfileArgs {
    /// Multiplier on every arrival rate.
    #[arg(long, env = "BENCH_RATE_SCALE", default_value_t = 1.0)]
    rate_scale: f64,
    /// Profile time in seconds at which to start.
    #[arg(long, env = "BENCH_START_AT", default_value_t = 0.0)]
    start_at: f64,
    /// Maximum profile time in seconds to cover.
    #[arg(long, env = "BENCH_DURATION_CAP")]
    duration_cap: Option<f64>,
    /// Within-bucket arrival spacing: even or poisson.
    #[arg(long, env = "BENCH_ARRIVALS", default_value = "even")]
    arrivals: ArrivalPattern,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    profile: ProfileArgs,
    #[arg(long, env = "BENCH_SEED")]
    seed: u64,
    #[arg(long, env = "BENCH_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[arg(long, env = "BENCH_HEADROOM")]
    headroom: Option<f64>,
    #[arg(long, env = "BENCH_RATE_SCALE", default_value_t = 1.0)]
    rate_scale: f64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    profile: ProfileArgs,
    #[arg(long, env = "BENCH_SEED")]
    seed: u64,
    /// Replay a trace file instead of generating one.
    #[arg(long, env = "BENCH_TRACE")]
    trace: Option<PathBuf>,
    /// Replay speed-up factor.
    #[arg(long, env = "BENCH_TIME_SCALE", default_value_t = 1.0)]
    time_scale: f64,
    /// `auto` (planner), `half` (planner halved) or a JSON file mapping task
    /// names to thread counts.
    #[arg(long, env = "BENCH_PARALLELISM", default_value = "auto")]
    parallelism: String,
    /// Planner headroom used with `auto` and `half`.
    #[arg(long, env = "BENCH_HEADROOM")]
    headroom: Option<f64>,
    /// Routing mode: quota or prob. Defaults to the workload's.
    #[arg(long, env = "BENCH_ROUTING")]
    routing: Option<RoutingMode>,
    /// Deterministic simulation instead of threaded execution.
    #[arg(long, env = "BENCH_SIM")]
    sim: bool,
    /// Parent directory; each run writes a new timestamped subdirectory.
    #[arg(long, env = "BENCH_REPORT")]
    report: PathBuf,
    #[arg(long, env = "BENCH_QUEUE_CAPACITY", default_value_t = 10_000)]
    queue_capacity: usize,
    /// Seconds to wait for in-flight events after the last injection.
    #[arg(long, env = "BENCH_DRAIN_TIMEOUT", default_value_t = 120.0)]
    drain_timeout: f64,
    /// Sample host-wide CPU utilization instead of this process's.
    #[arg(long, env = "BENCH_HOST_CPU")]
    host_cpu: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, env = "BENCH_REPORT")]
    report: PathBuf,
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let value = value.trim().parse().map_err(|_| format!("`{value}` is not a number"))?;
    Ok((name.trim().to_string(), value))
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: EXIT_CONFIG, error: e.into() }
    }
}

fn load_workload(args: &WorkloadArgs) -> Result<WorkloadSpec> {
    let mut w = WorkloadSpec::resolve(&args.workload)?;
    for (name, value) in &args.set {
        w = w.with_parameter(name, *value)?;
    }
    Ok(w)
}

fn gen(args: GenArgs) -> Result<(), Failure> {
    let w = load_workload(&args.workload)?;
    let cfg = RunConfig {
        rate_scale: args.profile.rate_scale,
        start_at_s: args.profile.start_at,
        duration_cap_s: args.profile.duration_cap,
        ..Default::default()
    };
    let profile = run_profile(&w, &cfg)?;
    let trace = generate_with(&profile, &w.size_histogram, args.seed, args.profile.arrivals)?;
    write_trace(&trace, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("{} events written to {}", trace.len(), args.out.display());
    Ok(())
}

fn plan_cmd(args: PlanArgs) -> Result<(), Failure> {
    let w = load_workload(&args.workload)?;
    let mut input = w.plan_input(args.rate_scale);
    if let Some(h) = args.headroom {
        if !(h >= 1.0) {
            return Err(anyhow!("headroom must be at least 1, got {h}").into());
        }
        input.headroom = h;
    }
    let p = plan(&w.topology, &input);
    println!("workload {} at peak {:.3} ev/s, headroom {}", w.name, input.peak_rate, input.headroom);
    let width = p.parallelism.iter().map(|(n, _)| n.len()).max().unwrap_or(4).max(4);
    println!("{:<width$}  threads", "task");
    for task in w.topology.processing_tasks() {
        println!("{:<width$}  {:>7}", task.name, p.parallelism.get(&task.name).unwrap_or(0));
    }
    println!("{:<width$}  {:>7}", "total", p.total_threads);
    println!("nodes: {} ({} slots at {} threads/node)", p.nodes, p.slots, input.threads_per_node);
    println!("{}", serde_json::to_string_pretty(&p.parallelism).map_err(anyhow::Error::from)?);
    Ok(())
}

/// Creates a fresh, never-reused report directory under `parent`.
fn fresh_report_dir(parent: &Path, workload: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S%.3f");
    let base = format!("{}-{stamp}", workload.replace(['/', '\\'], "_"));
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = parent.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

fn run_cmd(args: RunArgs) -> Result<(), Failure> {
    let w = load_workload(&args.workload)?;
    let parallelism = match args.parallelism.as_str() {
        "auto" => ParallelismChoice::Auto,
        "half" => ParallelismChoice::HalfPlan,
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            let map: ParallelismMap =
                serde_json::from_str(&text).with_context(|| format!("parsing parallelism file {path}"))?;
            ParallelismChoice::Explicit(map)
        }
    };
    if !(args.drain_timeout > 0.0) {
        return Err(anyhow!("drain timeout must be positive").into());
    }
    let trace = match &args.trace {
        Some(p) => Some(read_trace(p).with_context(|| format!("reading trace {}", p.display()))?),
        None => None,
    };
    let cfg = RunConfig {
        seed: args.seed,
        time_scale: args.time_scale,
        rate_scale: args.profile.rate_scale,
        start_at_s: args.profile.start_at,
        duration_cap_s: args.profile.duration_cap,
        parallelism,
        headroom: args.headroom,
        routing: args.routing,
        arrivals: args.profile.arrivals,
        sim: args.sim,
        queue_capacity: args.queue_capacity,
        drain_timeout: Duration::from_secs_f64(args.drain_timeout),
        cpu_scope: (!args.sim).then_some(if args.host_cpu { CpuScope::Host } else { CpuScope::Process }),
        trace,
        ..Default::default()
    };
    let outcome = run(&w, &cfg).map_err(|e| {
        let code = match &e {
            RunError::Drain(_) | RunError::Replay(_) => EXIT_DRAIN,
            _ => EXIT_CONFIG,
        };
        Failure { code, error: e.into() }
    })?;
    let dir = fresh_report_dir(&args.report, &w.name)?;
    export(&outcome.report, &dir).with_context(|| format!("writing report to {}", dir.display()))?;
    let r = &outcome.report;
    println!("report: {}", dir.display());
    println!("events: {}", r.total);
    println!("violations: {}", r.violation_line());
    if let Some(l) = r.overall {
        println!(
            "latency ms: min {:.3} median {:.3} p95 {:.3} max {:.3}",
            l.min_us as f64 / 1e3,
            l.median_us as f64 / 1e3,
            l.p95_us as f64 / 1e3,
            l.max_us as f64 / 1e3
        );
    }
    println!("backlog at end of injection: {}", outcome.backlog_at_injection_end);
    Ok(())
}

fn verify_cmd(args: VerifyArgs) -> Result<(), Failure> {
    match verify_report(&args.report) {
        Ok(v) => {
            println!("ok: {} events, {} violations, {} buckets", v.events, v.violations, v.buckets);
            Ok(())
        }
        Err(e @ VerifyError::Io { .. }) => Err(e.into()),
        Err(e) => Err(Failure { code: EXIT_VERIFY, error: e.into() }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Plan(a) => plan_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Verify(a) => verify_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
