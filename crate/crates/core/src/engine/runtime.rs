//! Multi-threaded topology execution.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender};
use thiserror::Error;

use super::{synthetic_work, EngineError, ParallelismMap, Router, RoutingMode};
use crate::generator::{EventRecord, PayloadSource};
use crate::metrics::LatencySample;
use crate::topology::{TaskGraph, TaskId, TaskKind};

const WORKER_STACK: usize = 256 * 1024;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub routing: RoutingMode,
    pub seed: u64,
    /// Capacity of each task's inbound queue.
    pub queue_capacity: usize,
    pub drain_timeout: Duration,
    /// Attach synthetic payload bytes of the event's size to each envelope.
    pub materialize_payloads: bool,
    pub record_paths: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            routing: RoutingMode::Quota,
            seed: 0,
            queue_capacity: 10_000,
            drain_timeout: Duration::from_secs(120),
            materialize_payloads: true,
            record_paths: false,
        }
    }
}

/// An event in flight through the topology.
#[derive(Debug)]
pub struct EventEnvelope {
    pub event: EventRecord,
    pub ingress: Instant,
    pub payload: Vec<u8>,
    /// Tasks traversed so far, starting with the source.
    pub path: Vec<TaskId>,
}

enum Msg {
    Event(EventEnvelope),
    Stop,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InjectError {
    #[error("injection rejected: drain already initiated")]
    Draining,
}

#[derive(Debug, Error)]
pub struct DrainTimeout {
    pub waited: Duration,
    pub injected: u64,
    pub completed: u64,
    pub queue_depths: Vec<(String, usize)>,
}

impl fmt::Display for DrainTimeout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "drain timed out after {:?}: {} of {} events completed; queue depths:",
            self.waited, self.completed, self.injected
        )?;
        for (task, depth) in &self.queue_depths {
            write!(f, " {task}={depth}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct DrainOutcome {
    pub injected: u64,
    pub sink_counts: BTreeMap<String, u64>,
    /// Samples in no particular order.
    pub samples: Vec<LatencySample>,
    /// `(event id, path)` pairs when path recording is enabled.
    pub paths: Vec<(u64, Vec<TaskId>)>,
}

struct WorkerResult {
    samples: Vec<LatencySample>,
    paths: Vec<(u64, Vec<TaskId>)>,
}

struct Shared {
    graph: TaskGraph,
    router: Router,
    senders: Vec<Option<Sender<Msg>>>,
    completed: AtomicU64,
    sink_counts: Vec<AtomicU64>,
    clock: Instant,
    record_paths: bool,
}

impl Shared {
    /// Routes an envelope leaving `from` and enqueues it downstream,
    /// blocking while the target queue is full.
    fn forward(&self, from: TaskId, mut env: EventEnvelope) {
        let edge = self.router.route(from);
        let to = self.graph.task(from).outgoing[edge].to;
        env.path.push(to);
        let tx = self.senders[to as usize].as_ref().expect("non-source task has a queue");
        tx.send(Msg::Event(env)).expect("worker queues outlive the run");
    }
}

/// A started topology accepting events through [`RunningTopology::inject`].
pub struct RunningTopology {
    shared: Arc<Shared>,
    receivers: Vec<Option<Receiver<Msg>>>,
    workers: Mutex<Vec<(TaskId, JoinHandle<WorkerResult>)>>,
    threads: Vec<u32>,
    injected: AtomicU64,
    draining: AtomicBool,
    materialize: bool,
    payloads: Mutex<PayloadSource>,
    drain_timeout: Duration,
}

impl RunningTopology {
    /// Spawns the worker pools. The system is idle until events are injected.
    pub fn start(graph: &TaskGraph, par: &ParallelismMap, cfg: &EngineConfig) -> Result<Self, EngineError> {
        if cfg.queue_capacity == 0 {
            return Err(EngineError::ZeroQueueCapacity);
        }
        let threads = par.per_task(graph)?;
        let mut senders = Vec::with_capacity(graph.len());
        let mut receivers = Vec::with_capacity(graph.len());
        for t in graph.tasks() {
            if t.kind == TaskKind::Source {
                senders.push(None);
                receivers.push(None);
            } else {
                let (tx, rx) = bounded(cfg.queue_capacity);
                senders.push(Some(tx));
                receivers.push(Some(rx));
            }
        }
        let shared = Arc::new(Shared {
            graph: graph.clone(),
            router: Router::new(graph, cfg.routing, cfg.seed),
            senders,
            completed: AtomicU64::new(0),
            sink_counts: graph.tasks().iter().map(|_| AtomicU64::new(0)).collect(),
            clock: Instant::now(),
            record_paths: cfg.record_paths,
        });

        let mut workers = Vec::new();
        for (id, &n) in threads.iter().enumerate() {
            let id = id as TaskId;
            for k in 0..n {
                let rx = receivers[id as usize].clone().expect("processing task has a queue");
                let shared = Arc::clone(&shared);
                let handle = std::thread::Builder::new()
                    .name(format!("{}#{k}", graph.task(id).name))
                    .stack_size(WORKER_STACK)
                    .spawn(move || worker_loop(&shared, id, rx))?;
                workers.push((id, handle));
            }
        }

        Ok(Self {
            shared,
            receivers,
            workers: Mutex::new(workers),
            threads,
            injected: AtomicU64::new(0),
            draining: AtomicBool::new(false),
            materialize: cfg.materialize_payloads,
            payloads: Mutex::new(PayloadSource::new(cfg.seed)),
            drain_timeout: cfg.drain_timeout,
        })
    }

    /// Instant that sample timestamps are measured from.
    pub fn clock(&self) -> Instant {
        self.shared.clock
    }

    /// Total worker threads spawned.
    pub fn thread_count(&self) -> u64 {
        self.threads.iter().map(|&n| u64::from(n)).sum()
    }

    pub fn injected(&self) -> u64 {
        self.injected.load(Ordering::SeqCst)
    }

    pub fn completed(&self) -> u64 {
        self.shared.completed.load(Ordering::SeqCst)
    }

    /// Events injected but not yet terminated at a sink.
    pub fn in_flight(&self) -> u64 {
        self.injected().saturating_sub(self.completed())
    }

    /// Current inbound queue length per processing task.
    pub fn queue_depths(&self) -> Vec<(String, usize)> {
        self.receivers
            .iter()
            .enumerate()
            .filter_map(|(i, rx)| {
                rx.as_ref().map(|rx| (self.shared.graph.task(i as TaskId).name.clone(), rx.len()))
            })
            .collect()
    }

    /// Routes `event` out of the source. Blocks while the target queue is
    /// full.
    pub fn inject(&self, event: &EventRecord, ingress: Instant) -> Result<(), InjectError> {
        if self.draining.load(Ordering::SeqCst) {
            return Err(InjectError::Draining);
        }
        let payload = if self.materialize {
            self.payloads.lock().expect("payload lock").payload(event.size_bytes)
        } else {
            Vec::new()
        };
        let source = self.shared.graph.source();
        let env = EventEnvelope { event: *event, ingress, payload, path: vec![source] };
        self.injected.fetch_add(1, Ordering::SeqCst);
        self.shared.forward(source, env);
        Ok(())
    }

    /// Stops accepting injections; call [`RunningTopology::drain`] next.
    pub fn begin_drain(&self) {
        self.draining.store(true, Ordering::SeqCst);
    }

    /// Waits for every injected event to terminate, then joins all workers.
    pub fn drain(self) -> Result<DrainOutcome, DrainTimeout> {
        self.begin_drain();
        let started = Instant::now();
        let injected = self.injected();
        while self.completed() < injected {
            if started.elapsed() > self.drain_timeout {
                let err = DrainTimeout {
                    waited: started.elapsed(),
                    injected,
                    completed: self.completed(),
                    queue_depths: self.queue_depths(),
                };
                for (id, tx) in self.shared.senders.iter().enumerate() {
                    if let Some(tx) = tx {
                        for _ in 0..self.threads[id] {
                            let _ = tx.try_send(Msg::Stop);
                        }
                    }
                }
                return Err(err);
            }
            std::thread::sleep(Duration::from_millis(1));
        }

        for (id, tx) in self.shared.senders.iter().enumerate() {
            if let Some(tx) = tx {
                for _ in 0..self.threads[id] {
                    tx.send(Msg::Stop).expect("queue open");
                }
            }
        }
        let mut out = DrainOutcome { injected, ..Default::default() };
        let workers = std::mem::take(&mut *self.workers.lock().expect("workers lock"));
        for (_, handle) in workers {
            let r = handle.join().expect("worker panicked");
            out.samples.extend(r.samples);
            out.paths.extend(r.paths);
        }
        for (i, t) in self.shared.graph.tasks().iter().enumerate() {
            if t.kind == TaskKind::Sink {
                out.sink_counts.insert(t.name.clone(), self.shared.sink_counts[i].load(Ordering::SeqCst));
            }
        }
        Ok(out)
    }
}

fn worker_loop(shared: &Shared, me: TaskId, rx: Receiver<Msg>) -> WorkerResult {
    crate::clock::set_fine_timer_slack();
    let task = shared.graph.task(me);
    let sink: Option<Arc<str>> = (task.kind == TaskKind::Sink).then(|| Arc::from(task.name.as_str()));
    let mut result = WorkerResult { samples: Vec::new(), paths: Vec::new() };
    while let Ok(Msg::Event(env)) = rx.recv() {
        synthetic_work(task.service_time, task.resource_class);
        match &sink {
            Some(name) => {
                let egress = Instant::now();
                result.samples.push(LatencySample {
                    event_id: env.event.id,
                    ingress_us: micros_since(shared.clock, env.ingress),
                    egress_us: micros_since(shared.clock, egress),
                    sink: Arc::clone(name),
                    size_bytes: env.event.size_bytes,
                });
                if shared.record_paths {
                    result.paths.push((env.event.id, env.path));
                }
                shared.sink_counts[me as usize].fetch_add(1, Ordering::SeqCst);
                shared.completed.fetch_add(1, Ordering::SeqCst);
            }
            None => shared.forward(me, env),
        }
    }
    result
}

fn micros_since(origin: Instant, t: Instant) -> u64 {
    t.saturating_duration_since(origin).as_micros() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::fixtures::{fork, linear};
    use crate::topology::ResourceClass;

    fn rec(id: u64) -> EventRecord {
        EventRecord { id, offset_ms: 0, size_bytes: 16 }
    }

    #[test]
    fn linear_run_conserves_events() {
        let topo = linear(&[0.2, 0.1, 0.3]);
        let g = topo.compile().unwrap();
        let rt = RunningTopology::start(&g, &ParallelismMap::ones(&topo), &EngineConfig::default()).unwrap();
        assert_eq!(rt.thread_count(), 3);
        for i in 0..200 {
            rt.inject(&rec(i), Instant::now()).unwrap();
        }
        let out = rt.drain().unwrap();
        assert_eq!(out.injected, 200);
        assert_eq!(out.sink_counts["t2"], 200);
        let mut ids: Vec<u64> = out.samples.iter().map(|s| s.event_id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn empty_drain() {
        let topo = fork(0.5);
        let g = topo.compile().unwrap();
        let rt = RunningTopology::start(&g, &ParallelismMap::ones(&topo), &EngineConfig::default()).unwrap();
        let out = rt.drain().unwrap();
        assert_eq!(out.sink_counts.values().sum::<u64>(), 0);
        assert_eq!(out.sink_counts.len(), 2);
    }

    #[test]
    fn inject_after_drain_rejected() {
        let topo = linear(&[0.0]);
        let g = topo.compile().unwrap();
        let rt = RunningTopology::start(&g, &ParallelismMap::ones(&topo), &EngineConfig::default()).unwrap();
        rt.inject(&rec(0), Instant::now()).unwrap();
        rt.begin_drain();
        assert_eq!(rt.inject(&rec(1), Instant::now()), Err(InjectError::Draining));
        assert_eq!(rt.drain().unwrap().injected, 1);
    }

    #[test]
    fn start_refuses_bad_config() {
        let topo = linear(&[1.0, 1.0]);
        let g = topo.compile().unwrap();
        let mut par = ParallelismMap::ones(&topo);
        let cfg = EngineConfig { queue_capacity: 0, ..Default::default() };
        assert!(matches!(RunningTopology::start(&g, &par, &cfg), Err(EngineError::ZeroQueueCapacity)));
        par = ParallelismMap::new(par.as_map().iter().filter(|(k, _)| *k != "t1").map(|(k, v)| (k.clone(), *v)).collect());
        match RunningTopology::start(&g, &par, &EngineConfig::default()) {
            Err(EngineError::InvalidParallelism(v)) => assert!(v[0].contains("t1")),
            _ => panic!("expected refusal"),
        }
    }

    #[test]
    fn full_queue_blocks_injection() {
        // capacity 1, one 40 ms idle worker: the third inject must wait for
        // the worker to take the first event off the queue
        let mut topo = linear(&[40.0]);
        topo.tasks[1].resource_class = ResourceClass::Idle;
        let g = topo.compile().unwrap();
        let cfg = EngineConfig { queue_capacity: 1, ..Default::default() };
        let rt = RunningTopology::start(&g, &ParallelismMap::ones(&topo), &cfg).unwrap();
        rt.inject(&rec(0), Instant::now()).unwrap();
        std::thread::sleep(Duration::from_millis(10));
        rt.inject(&rec(1), Instant::now()).unwrap();
        let t = Instant::now();
        rt.inject(&rec(2), Instant::now()).unwrap();
        let blocked = t.elapsed();
        assert!(blocked >= Duration::from_millis(20), "{blocked:?}");
        assert_eq!(rt.drain().unwrap().sink_counts["t0"], 3);
    }

    #[test]
    fn paths_recorded_and_legal() {
        let topo = fork(0.4);
        let g = topo.compile().unwrap();
        let cfg = EngineConfig { record_paths: true, ..Default::default() };
        let rt = RunningTopology::start(&g, &ParallelismMap::ones(&topo), &cfg).unwrap();
        for i in 0..50 {
            rt.inject(&rec(i), Instant::now()).unwrap();
        }
        let out = rt.drain().unwrap();
        assert_eq!(out.paths.len(), 50);
        assert!(out.paths.iter().all(|(_, p)| g.is_legal_path(p)));
        assert_eq!(out.sink_counts["A"], 20);
        for s in &out.samples {
            let path = &out.paths.iter().find(|(id, _)| *id == s.event_id).unwrap().1;
            assert!(Duration::from_micros(s.egress_us - s.ingress_us) >= g.path_service_time(path));
        }
    }

    #[test]
    fn drain_timeout_reports_depths() {
        let mut topo = linear(&[300.0]);
        topo.tasks[1].resource_class = ResourceClass::Idle;
        let g = topo.compile().unwrap();
        let cfg = EngineConfig { drain_timeout: Duration::from_millis(50), ..Default::default() };
        let rt = RunningTopology::start(&g, &ParallelismMap::ones(&topo), &cfg).unwrap();
        for i in 0..3 {
            rt.inject(&rec(i), Instant::now()).unwrap();
        }
        let err = rt.drain().unwrap_err();
        assert_eq!(err.injected, 3);
        assert!(err.to_string().contains("t0="), "{err}");
    }
}
