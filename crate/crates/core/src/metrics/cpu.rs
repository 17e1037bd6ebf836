use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, RecvTimeoutError, Sender};

use crate::clock::process_cpu_time;

/// What a utilization sample measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CpuScope {
    /// This process, normalized by the number of available cores.
    #[default]
    Process,
    /// The whole host, from `/proc/stat`.
    Host,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpuSample {
    /// Seconds since sampling started, at the end of the interval.
    pub t_s: f64,
    /// Busy percentage in `[0, 100]`.
    pub util_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CpuSeries {
    Samples(Vec<CpuSample>),
    Unavailable(String),
}

impl Default for CpuSeries {
    fn default() -> Self {
        CpuSeries::Unavailable("not sampled".into())
    }
}

impl CpuSeries {
    pub fn samples(&self) -> &[CpuSample] {
        match self {
            CpuSeries::Samples(s) => s,
            CpuSeries::Unavailable(_) => &[],
        }
    }

    pub fn mean(&self) -> Option<f64> {
        let s = self.samples();
        (!s.is_empty()).then(|| s.iter().map(|x| x.util_pct).sum::<f64>() / s.len() as f64)
    }
}

#[derive(Debug, Clone, Copy)]
struct HostTimes {
    busy: u64,
    total: u64,
}

fn read_host_times() -> Option<HostTimes> {
    let stat = std::fs::read_to_string("/proc/stat").ok()?;
    let line = stat.lines().find(|l| l.starts_with("cpu "))?;
    let fields: Vec<u64> = line.split_whitespace().skip(1).filter_map(|f| f.parse().ok()).collect();
    if fields.len() < 4 {
        return None;
    }
    // guest time is already folded into user/nice
    let total: u64 = fields.iter().take(8).sum();
    let idle = fields[3] + fields.get(4).copied().unwrap_or(0);
    Some(HostTimes { busy: total - idle, total })
}

enum Reading {
    Process(Duration),
    Host(HostTimes),
}

fn read(scope: CpuScope) -> Option<Reading> {
    match scope {
        CpuScope::Process => process_cpu_time().map(Reading::Process),
        CpuScope::Host => read_host_times().map(Reading::Host),
    }
}

fn utilization(prev: &Reading, cur: &Reading, wall: Duration, cores: f64) -> f64 {
    let pct = match (prev, cur) {
        (Reading::Process(a), Reading::Process(b)) => {
            let wall = wall.as_secs_f64();
            if wall <= 0.0 {
                0.0
            } else {
                b.saturating_sub(*a).as_secs_f64() / (wall * cores) * 100.0
            }
        }
        (Reading::Host(a), Reading::Host(b)) => {
            let total = b.total.saturating_sub(a.total);
            if total == 0 {
                0.0
            } else {
                b.busy.saturating_sub(a.busy) as f64 / total as f64 * 100.0
            }
        }
        _ => 0.0,
    };
    pct.clamp(0.0, 100.0)
}

/// Background utilization sampler at a fixed interval.
pub struct CpuSampler {
    stop: Sender<()>,
    handle: JoinHandle<CpuSeries>,
}

impl CpuSampler {
    pub fn start(interval: Duration, scope: CpuScope) -> Self {
        let (stop, stop_rx) = bounded::<()>(1);
        let handle = std::thread::Builder::new()
            .name("cpu-sampler".into())
            .spawn(move || {
                let Some(mut prev) = read(scope) else {
                    return CpuSeries::Unavailable(format!("{scope:?} CPU time is not readable"));
                };
                let cores = std::thread::available_parallelism().map_or(1, |n| n.get()) as f64;
                let origin = Instant::now();
                let mut last = origin;
                let mut out = Vec::new();
                let mut tick = 1u32;
                loop {
                    let deadline = origin + interval * tick;
                    let wait = deadline.saturating_duration_since(Instant::now());
                    match stop_rx.recv_timeout(wait) {
                        Err(RecvTimeoutError::Timeout) => {}
                        _ => break,
                    }
                    let now = Instant::now();
                    let Some(cur) = read(scope) else { break };
                    out.push(CpuSample {
                        t_s: (now - origin).as_secs_f64(),
                        util_pct: utilization(&prev, &cur, now - last, cores),
                    });
                    prev = cur;
                    last = now;
                    tick += 1;
                }
                CpuSeries::Samples(out)
            })
            .expect("spawn cpu sampler");
        Self { stop, handle }
    }

    pub fn stop(self) -> CpuSeries {
        let _ = self.stop.send(());
        self.handle.join().unwrap_or_else(|_| CpuSeries::Unavailable("sampler panicked".into()))
    }
}
