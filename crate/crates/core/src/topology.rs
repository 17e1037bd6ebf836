//! Declarative dataflow model: tasks with service latencies, edges with
//! selectivities, validation, and analytic path queries.
//!
//! Selectivity means routing: every event leaving a non-sink task takes
//! exactly one outgoing edge, chosen with probability equal to the edge's
//! selectivity. Events are never replicated.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Tolerance on `Σ selectivity = 1` over a task's outgoing edges.
pub const SELECTIVITY_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceClass {
    /// Busy in-memory computation for the service latency.
    Cpu,
    /// Timed wait for the service latency.
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Source,
    Worker,
    Sink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeLabel {
    /// Taken by events that pass the task's check.
    P,
    /// Taken by events that fail the task's check.
    F,
    #[serde(rename = "default")]
    Default,
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeLabel::P => f.write_str("P"),
            EdgeLabel::F => f.write_str("F"),
            EdgeLabel::Default => f.write_str("default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub service_latency_ms: f64,
    pub resource_class: ResourceClass,
    pub kind: TaskKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub label: EdgeLabel,
    pub selectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TopologySpec {
    pub tasks: Vec<TaskSpec>,
    pub edges: Vec<EdgeSpec>,
    /// Nominal pass-everything route from the source to a sink.
    pub success_path: Vec<String>,
}

/// An invariant violation found by [`TopologySpec::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateTask { task: String },
    NegativeLatency { task: String, latency_ms: f64 },
    SourceLatency { task: String, latency_ms: f64 },
    SourceCount { count: usize },
    NoSink,
    DanglingEdge { from: String, to: String, missing: String },
    SelectivityRange { from: String, to: String, selectivity: f64 },
    SelectivitySum { task: String, sum: f64 },
    NoOutgoing { task: String },
    SinkHasOutgoing { task: String },
    EdgeIntoSource { from: String, to: String },
    Cycle { tasks: Vec<String> },
    SuccessPath { reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateTask { task } => write!(f, "task {task}: duplicate name"),
            Violation::NegativeLatency { task, latency_ms } => {
                write!(f, "task {task}: negative service latency {latency_ms} ms")
            }
            Violation::SourceLatency { task, latency_ms } => {
                write!(f, "task {task}: source latency must be 0, got {latency_ms} ms")
            }
            Violation::SourceCount { count } => {
                write!(f, "topology must have exactly one source, found {count}")
            }
            Violation::NoSink => f.write_str("topology has no sink"),
            Violation::DanglingEdge { from, to, missing } => {
                write!(f, "edge {from}->{to}: dangling edge, unknown task {missing}")
            }
            Violation::SelectivityRange { from, to, selectivity } => {
                write!(f, "edge {from}->{to}: selectivity {selectivity} outside [0, 1]")
            }
            Violation::SelectivitySum { task, sum } => {
                write!(f, "task {task}: selectivity sum ≠ 1 (outgoing sum {sum})")
            }
            Violation::NoOutgoing { task } => write!(f, "task {task}: non-sink task has no outgoing edge"),
            Violation::SinkHasOutgoing { task } => write!(f, "task {task}: sink has outgoing edges"),
            Violation::EdgeIntoSource { from, to } => write!(f, "edge {from}->{to}: edge into the source"),
            Violation::Cycle { tasks } => write!(f, "cycle through tasks {}", tasks.join(", ")),
            Violation::SuccessPath { reason } => write!(f, "success path: {reason}"),
        }
    }
}

#[derive(Debug, Error)]
#[error("invalid topology: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct InvalidTopology(pub Vec<Violation>);

impl TopologySpec {
    pub fn task(&self, name: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn source(&self) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.kind == TaskKind::Source)
    }

    pub fn sinks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.iter().filter(|t| t.kind == TaskKind::Sink)
    }

    /// Tasks that execute service work: every task except the source.
    pub fn processing_tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.iter().filter(|t| t.kind != TaskKind::Source)
    }

    pub fn outgoing<'a>(&'a self, task: &'a str) -> impl Iterator<Item = &'a EdgeSpec> + 'a {
        self.edges.iter().filter(move |e| e.from == task)
    }

    /// Lists every invariant violation; an empty list means the topology is
    /// valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for t in &self.tasks {
            if seen.insert(&t.name, 0).is_some() {
                out.push(Violation::DuplicateTask { task: t.name.clone() });
            }
            if !(t.service_latency_ms >= 0.0) {
                out.push(Violation::NegativeLatency {
                    task: t.name.clone(),
                    latency_ms: t.service_latency_ms,
                });
            }
            if t.kind == TaskKind::Source && t.service_latency_ms != 0.0 {
                out.push(Violation::SourceLatency {
                    task: t.name.clone(),
                    latency_ms: t.service_latency_ms,
                });
            }
        }
        let sources = self.tasks.iter().filter(|t| t.kind == TaskKind::Source).count();
        if sources != 1 {
            out.push(Violation::SourceCount { count: sources });
        }
        if self.sinks().next().is_none() {
            out.push(Violation::NoSink);
        }

        let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
        for e in &self.edges {
            for end in [&e.from, &e.to] {
                if self.task(end).is_none() {
                    out.push(Violation::DanglingEdge {
                        from: e.from.clone(),
                        to: e.to.clone(),
                        missing: end.clone(),
                    });
                }
            }
            if !(0.0..=1.0).contains(&e.selectivity) {
                out.push(Violation::SelectivityRange {
                    from: e.from.clone(),
                    to: e.to.clone(),
                    selectivity: e.selectivity,
                });
            }
            if self.task(&e.to).is_some_and(|t| t.kind == TaskKind::Source) {
                out.push(Violation::EdgeIntoSource { from: e.from.clone(), to: e.to.clone() });
            }
            *sums.entry(&e.from).or_default() += e.selectivity;
        }
        for t in &self.tasks {
            match (t.kind, sums.get(t.name.as_str())) {
                (TaskKind::Sink, Some(_)) => {
                    out.push(Violation::SinkHasOutgoing { task: t.name.clone() })
                }
                (TaskKind::Sink, None) => {}
                (_, None) => out.push(Violation::NoOutgoing { task: t.name.clone() }),
                (_, Some(&sum)) => {
                    if (sum - 1.0).abs() > SELECTIVITY_SUM_TOLERANCE {
                        out.push(Violation::SelectivitySum { task: t.name.clone(), sum });
                    }
                }
            }
        }

        if let Err(cycle) = self.topological_order() {
            out.push(Violation::Cycle { tasks: cycle });
        }
        if let Err(reason) = self.check_success_path() {
            out.push(Violation::SuccessPath { reason });
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Kahn ordering of tasks. On a cycle, returns the names left unordered.
    fn topological_order(&self) -> Result<Vec<usize>, Vec<String>> {
        let index: HashMap<&str, usize> =
            self.tasks.iter().enumerate().map(|(i, t)| (t.name.as_str(), i)).collect();
        let mut indegree = vec![0usize; self.tasks.len()];
        let mut adj = vec![Vec::new(); self.tasks.len()];
        for e in &self.edges {
            if let (Some(&a), Some(&b)) = (index.get(e.from.as_str()), index.get(e.to.as_str())) {
                adj[a].push(b);
                indegree[b] += 1;
            }
        }
        let mut queue: VecDeque<usize> = (0..self.tasks.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.tasks.len());
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &j in &adj[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    queue.push_back(j);
                }
            }
        }
        if order.len() == self.tasks.len() {
            Ok(order)
        } else {
            Err((0..self.tasks.len())
                .filter(|&i| indegree[i] > 0)
                .map(|i| self.tasks[i].name.clone())
                .collect())
        }
    }

    fn check_success_path(&self) -> Result<(), String> {
        let path = &self.success_path;
        let (Some(first), Some(last)) = (path.first(), path.last()) else {
            return Err("empty".into());
        };
        for name in path {
            if self.task(name).is_none() {
                return Err(format!("unknown task {name}"));
            }
        }
        if self.task(first).map(|t| t.kind) != Some(TaskKind::Source) {
            return Err(format!("starts at {first}, which is not the source"));
        }
        if self.task(last).map(|t| t.kind) != Some(TaskKind::Sink) {
            return Err(format!("ends at {last}, which is not a sink"));
        }
        for pair in path.windows(2) {
            let ok = self.edges.iter().any(|e| {
                e.from == pair[0] && e.to == pair[1] && e.label != EdgeLabel::F
            });
            if !ok {
                return Err(format!("no P/default edge {}->{}", pair[0], pair[1]));
            }
        }
        Ok(())
    }

    /// Sum of service latencies along the success path, in milliseconds.
    pub fn success_path_latency(&self) -> f64 {
        self.success_path
            .iter()
            .filter_map(|n| self.task(n))
            .map(|t| t.service_latency_ms)
            .sum()
    }

    /// Probability that an event injected at the source visits each task,
    /// by forward propagation of selectivities in topological order.
    pub fn reach<T: Scalar>(&self) -> BTreeMap<String, T> {
        let order = self.topological_order().unwrap_or_else(|_| (0..self.tasks.len()).collect());
        let index: HashMap<&str, usize> =
            self.tasks.iter().enumerate().map(|(i, t)| (t.name.as_str(), i)).collect();
        let mut reach = vec![T::zero(); self.tasks.len()];
        for (i, t) in self.tasks.iter().enumerate() {
            if t.kind == TaskKind::Source {
                reach[i] = T::one();
            }
        }
        for &i in &order {
            let here = reach[i];
            for e in self.outgoing(&self.tasks[i].name) {
                if let Some(&j) = index.get(e.to.as_str()) {
                    reach[j] = reach[j] + here * T::from_f64(e.selectivity);
                }
            }
        }
        self.tasks.iter().map(|t| t.name.clone()).zip(reach).collect()
    }

    /// Probability that an event terminates at each sink.
    pub fn terminal_probabilities<T: Scalar>(&self) -> BTreeMap<String, T> {
        let mut reach = self.reach::<T>();
        reach.retain(|name, _| self.task(name).is_some_and(|t| t.kind == TaskKind::Sink));
        reach
    }

    /// Copy with every service latency multiplied by `factor`.
    pub fn with_latency_scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.tasks {
            t.service_latency_ms *= factor;
        }
        out
    }

    pub fn compile(&self) -> Result<TaskGraph, InvalidTopology> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(InvalidTopology(violations));
        }
        Ok(TaskGraph::build(self))
    }
}

/// Dense task identifier inside a [`TaskGraph`].
pub type TaskId = u16;

#[derive(Debug, Clone)]
pub struct GraphTask {
    pub name: String,
    pub kind: TaskKind,
    pub resource_class: ResourceClass,
    pub service_time: Duration,
    pub outgoing: Vec<GraphEdge>,
}

#[derive(Debug, Clone)]
pub struct GraphEdge {
    pub to: TaskId,
    pub label: EdgeLabel,
    pub selectivity: f64,
}

/// Index-based form of a validated topology used by the engine.
#[derive(Debug, Clone)]
pub struct TaskGraph {
    tasks: Vec<GraphTask>,
    source: TaskId,
}

impl TaskGraph {
    fn build(spec: &TopologySpec) -> Self {
        let index: HashMap<&str, TaskId> = spec
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.as_str(), i as TaskId))
            .collect();
        let tasks: Vec<GraphTask> = spec
            .tasks
            .iter()
            .map(|t| GraphTask {
                name: t.name.clone(),
                kind: t.kind,
                resource_class: t.resource_class,
                service_time: latency_duration(t.service_latency_ms),
                outgoing: spec
                    .outgoing(&t.name)
                    .map(|e| GraphEdge {
                        to: index[e.to.as_str()],
                        label: e.label,
                        selectivity: e.selectivity,
                    })
                    .collect(),
            })
            .collect();
        let source = tasks.iter().position(|t| t.kind == TaskKind::Source).unwrap_or(0) as TaskId;
        Self { tasks, source }
    }

    pub fn tasks(&self) -> &[GraphTask] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> &GraphTask {
        &self.tasks[id as usize]
    }

    pub fn source(&self) -> TaskId {
        self.source
    }

    pub fn id_of(&self, name: &str) -> Option<TaskId> {
        self.tasks.iter().position(|t| t.name == name).map(|i| i as TaskId)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// `true` when consecutive entries of `path` are joined by edges, the
    /// path starts at the source and ends at a sink.
    pub fn is_legal_path(&self, path: &[TaskId]) -> bool {
        path.first() == Some(&self.source)
            && path.last().is_some_and(|&s| self.task(s).kind == TaskKind::Sink)
            && path
                .windows(2)
                .all(|w| self.task(w[0]).outgoing.iter().any(|e| e.to == w[1]))
    }

    /// Total service time over `path`.
    pub fn path_service_time(&self, path: &[TaskId]) -> Duration {
        path.iter().map(|&t| self.task(t).service_time).sum()
    }
}

/// Millisecond latency to a `Duration`, rounded to the microsecond.
pub fn latency_duration(ms: f64) -> Duration {
    Duration::from_micros((ms * 1000.0).round().max(0.0) as u64)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::scalar::Exact;
    use num_traits::One;
    use proptest::prelude::*;

    #[test]
    fn linear_pipeline_is_valid() {
        let t = linear(&[1.0, 2.0, 3.0]);
        assert!(t.validate().is_empty());
        assert_eq!(t.terminal_probabilities::<f64>(), BTreeMap::from([("t2".to_string(), 1.0)]));
    }

    #[test]
    fn selectivity_sum_violation() {
        let mut t = fork(0.9);
        t.edges[1].selectivity = 0.05;
        let v = t.validate();
        assert!(matches!(&v[..], [Violation::SelectivitySum { task, .. }] if task == "src"));
        assert!(v[0].to_string().contains("selectivity sum ≠ 1"));
    }

    #[test]
    fn dangling_edge_violation() {
        let mut t = linear(&[1.0]);
        t.edges.push(edge("t0", "ghost", EdgeLabel::F, 0.0));
        let v = t.validate();
        assert!(v.iter().any(|v| v.to_string().contains("dangling edge")), "{v:?}");
    }

    #[test]
    fn structural_violations() {
        let mut t = linear(&[1.0, 2.0]);
        t.tasks[0].service_latency_ms = 3.0;
        t.tasks.push(task("t0", 1.0, TaskKind::Worker));
        t.edges.push(edge("t1", "t0", EdgeLabel::Default, 1.0));
        let v = t.validate();
        assert!(v.iter().any(|v| matches!(v, Violation::SourceLatency { .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::DuplicateTask { .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::SinkHasOutgoing { .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::Cycle { .. })));
    }

    #[test]
    fn success_path_must_follow_pass_edges() {
        let mut t = fork(0.5);
        t.success_path = vec!["src".into(), "B".into()];
        assert!(matches!(&t.validate()[..], [Violation::SuccessPath { .. }]));
    }

    #[test]
    fn validate_is_idempotent() {
        let mut t = fork(0.9);
        t.edges[1].selectivity = 0.3;
        assert_eq!(t.validate(), t.validate());
    }

    #[test]
    fn fork_probabilities() {
        let p = fork(0.3).terminal_probabilities::<f64>();
        assert!((p["A"] - 0.3).abs() < 1e-12);
        assert!((p["B"] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn success_path_latency_examples() {
        assert_eq!(linear(&[5.0]).success_path_latency(), 5.0);
        assert_eq!(linear(&[5.0, 7.5]).success_path_latency(), 12.5);
    }

    #[test]
    fn compile_rejects_invalid() {
        let mut t = fork(0.5);
        t.edges[0].selectivity = 1.2;
        let err = t.compile().unwrap_err();
        assert!(err.to_string().contains("src->A"));
    }

    #[test]
    fn legal_path_check() {
        let g = linear(&[1.0, 2.0]).compile().unwrap();
        assert!(g.is_legal_path(&[0, 1, 2]));
        assert!(!g.is_legal_path(&[0, 2]));
        assert!(!g.is_legal_path(&[1, 2]));
        assert_eq!(g.path_service_time(&[0, 1, 2]), Duration::from_millis(3));
    }

    /// Random layered DAG: every task routes to strictly later tasks; the
    /// last `sinks` tasks are sinks.
    fn random_dag() -> impl Strategy<Value = TopologySpec> {
        (3usize..10, 1usize..3, any::<u64>()).prop_map(|(n, sinks, seed)| {
            let sinks = sinks.min(n - 1);
            let mut state = seed | 1;
            let mut next = || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                state
            };
            let tasks: Vec<TaskSpec> = (0..n)
                .map(|i| {
                    let kind = if i == 0 {
                        TaskKind::Source
                    } else if i >= n - sinks {
                        TaskKind::Sink
                    } else {
                        TaskKind::Worker
                    };
                    task(&format!("n{i}"), if i == 0 { 0.0 } else { (next() % 100) as f64 }, kind)
                })
                .collect();
            let mut edges = Vec::new();
            for i in 0..n - sinks {
                let fanout = 1 + (next() % 3) as usize;
                let mut targets: Vec<usize> =
                    (0..fanout).map(|_| i + 1 + (next() as usize) % (n - i - 1)).collect();
                targets.sort_unstable();
                targets.dedup();
                let weights: Vec<f64> = targets.iter().map(|_| 1.0 + (next() % 97) as f64).collect();
                let total: f64 = weights.iter().sum();
                let mut assigned = 0.0;
                for (k, (&to, w)) in targets.iter().zip(&weights).enumerate() {
                    let s = if k + 1 == targets.len() { 1.0 - assigned } else { w / total };
                    assigned += s;
                    edges.push(edge(&format!("n{i}"), &format!("n{to}"), EdgeLabel::Default, s));
                }
            }
            // success path: follow the first edge until a sink
            let mut path = vec!["n0".to_string()];
            let mut cur = "n0".to_string();
            while let Some(e) = edges.iter().find(|e| e.from == cur) {
                cur = e.to.clone();
                path.push(cur.clone());
            }
            TopologySpec { tasks, edges, success_path: path }
        })
    }

    proptest! {
        #[test]
        fn terminal_probabilities_sum_to_one(topo in random_dag()) {
            // unreachable sinks are fine; dead-end workers are filtered by validation
            prop_assume!(topo.validate().is_empty());
            let p = topo.terminal_probabilities::<f64>();
            let sum: f64 = p.values().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9, "sum {}", sum);
        }

        #[test]
        fn exact_terminal_probabilities_sum_to_exactly_one(a in 1u32..99, b in 1u32..99) {
            let (pa, pb) = (a as f64 / 100.0, b as f64 / 100.0);
            let topo = TopologySpec {
                tasks: vec![
                    task("s", 0.0, TaskKind::Source),
                    task("w", 1.0, TaskKind::Worker),
                    task("x", 1.0, TaskKind::Sink),
                    task("y", 1.0, TaskKind::Sink),
                ],
                edges: vec![
                    edge("s", "w", EdgeLabel::P, pa),
                    edge("s", "y", EdgeLabel::F, 1.0 - pa),
                    edge("w", "x", EdgeLabel::P, pb),
                    edge("w", "y", EdgeLabel::F, 1.0 - pb),
                ],
                success_path: vec!["s".into(), "w".into(), "x".into()],
            };
            let p = topo.terminal_probabilities::<Exact>();
            let sum = p.values().fold(Exact::from_integer(0), |acc, &v| acc + v);
            prop_assert!(sum.is_one());
        }

        #[test]
        fn success_latency_ignores_selectivities(p in 0.0f64..=1.0) {
            let t = fork(p);
            prop_assert_eq!(t.success_path_latency(), fork(0.5).success_path_latency());
        }
    }
}
