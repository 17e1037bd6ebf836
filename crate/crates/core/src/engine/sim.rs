//! Deterministic discrete-event execution on a virtual microsecond clock.
//!
//! Each task is a FIFO multi-server queue with as many servers as its
//! parallelism and a fixed service time. Arrivals come from the trace
//! (offsets divided by the time scale). Completions at the same instant are
//! ordered by scheduling sequence, so identical inputs give identical
//! outputs.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::sync::Arc;

use super::{EngineError, ParallelismMap, Router, RoutingMode};
use crate::generator::Trace;
use crate::metrics::LatencySample;
use crate::topology::{TaskGraph, TaskId, TaskKind};

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub routing: RoutingMode,
    pub seed: u64,
    pub time_scale: f64,
    /// Keep the visited task sequence of every event.
    pub record_paths: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { routing: RoutingMode::Quota, seed: 0, time_scale: 1.0, record_paths: false }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimOutcome {
    pub injected: u64,
    /// Ordered by egress time.
    pub samples: Vec<LatencySample>,
    pub sink_counts: BTreeMap<String, u64>,
    /// Visited tasks per event id, when requested.
    pub paths: Vec<Vec<TaskId>>,
    /// Largest number of events waiting (not in service) at any task.
    pub max_queue_depth: usize,
}

struct Pending {
    ingress_us: u64,
    size_bytes: u64,
    path: Vec<TaskId>,
}

pub fn simulate(
    graph: &TaskGraph,
    par: &ParallelismMap,
    trace: &Trace,
    opts: &SimOptions,
) -> Result<SimOutcome, EngineError> {
    let servers = par.per_task(graph)?;
    let router = Router::new(graph, opts.routing, opts.seed);
    let service_us: Vec<u64> =
        graph.tasks().iter().map(|t| t.service_time.as_micros() as u64).collect();
    let sink_names: Vec<Arc<str>> = graph.tasks().iter().map(|t| Arc::from(t.name.as_str())).collect();

    let mut free = servers.clone();
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); graph.len()];
    // (time, seq, task, event index)
    let mut heap: BinaryHeap<Reverse<(u64, u64, TaskId, usize)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut events: Vec<Pending> = Vec::with_capacity(trace.len());
    let mut out = SimOutcome { injected: trace.len() as u64, ..Default::default() };
    let mut sink_counts = vec![0u64; graph.len()];

    let start_service = |task: TaskId, ev: usize, now: u64, heap: &mut BinaryHeap<_>, seq: &mut u64| {
        heap.push(Reverse((now + service_us[task as usize], *seq, task, ev)));
        *seq += 1;
    };

    let mut arrivals = trace.records.iter().peekable();
    loop {
        let next_arrival = arrivals
            .peek()
            .map(|r| (r.offset_ms as f64 * 1000.0 / opts.time_scale).round() as u64);
        let next_completion = heap.peek().map(|Reverse((t, ..))| *t);
        // completions first on ties: they free servers
        let (now, arrival) = match (next_arrival, next_completion) {
            (None, None) => break,
            (Some(a), Some(c)) if c <= a => (c, false),
            (Some(a), _) => (a, true),
            (None, Some(c)) => (c, false),
        };

        let (task_done, ev) = if arrival {
            let rec = arrivals.next().expect("peeked");
            events.push(Pending {
                ingress_us: now,
                size_bytes: rec.size_bytes,
                path: vec![graph.source()],
            });
            (graph.source(), events.len() - 1)
        } else {
            let Reverse((_, _, task, ev)) = heap.pop().expect("peeked");
            let t = task as usize;
            free[t] += 1;
            if let Some(next) = queues[t].pop_front() {
                free[t] -= 1;
                start_service(task, next, now, &mut heap, &mut seq);
            }
            (task, ev)
        };

        let task = graph.task(task_done);
        if task.kind == TaskKind::Sink {
            let p = &mut events[ev];
            sink_counts[task_done as usize] += 1;
            out.samples.push(LatencySample {
                event_id: trace.records[ev].id,
                ingress_us: p.ingress_us,
                egress_us: now,
                sink: sink_names[task_done as usize].clone(),
                size_bytes: p.size_bytes,
            });
            if !opts.record_paths {
                p.path = Vec::new();
            }
            continue;
        }

        let edge = router.route(task_done);
        let to = task.outgoing[edge].to;
        events[ev].path.push(to);
        let t = to as usize;
        if free[t] > 0 {
            free[t] -= 1;
            start_service(to, ev, now, &mut heap, &mut seq);
        } else {
            queues[t].push_back(ev);
            out.max_queue_depth = out.max_queue_depth.max(queues[t].len());
        }
    }

    for (i, t) in graph.tasks().iter().enumerate() {
        if t.kind == TaskKind::Sink {
            out.sink_counts.insert(t.name.clone(), sink_counts[i]);
        }
    }
    if opts.record_paths {
        out.paths = events.into_iter().map(|p| p.path).collect();
    }
    Ok(out)
}
