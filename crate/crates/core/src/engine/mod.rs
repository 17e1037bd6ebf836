//! Execution of a topology over an event stream.
//!
//! Two executors share the routing and accounting rules:
//!
//! * [`RunningTopology`]: real threads, one per parallelism unit per task,
//!   bounded FIFO inboxes with blocking enqueue (backpressure), and
//!   [`synthetic_work`] consuming each task's service latency.
//! * [`simulate`]: a single-threaded discrete-event simulation on a virtual
//!   microsecond clock. No sleeping, fully deterministic.

mod routing;
mod runtime;
mod sim;
mod work;

pub use routing::{EdgeChooser, Router, RoutingMode};
pub use runtime::{
    DrainOutcome, DrainTimeout, EngineConfig, EventEnvelope, InjectError, RunningTopology,
};
pub use sim::{simulate, SimOptions, SimOutcome};
pub use work::synthetic_work;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{TaskGraph, TaskKind, TopologySpec};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid parallelism map: {}", .0.join("; "))]
    InvalidParallelism(Vec<String>),
    #[error("queue capacity must be at least 1")]
    ZeroQueueCapacity,
    #[error("failed to spawn worker thread: {0}")]
    Spawn(#[from] std::io::Error),
}

/// Thread count per processing task (every task except the source).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParallelismMap(BTreeMap<String, u32>);

impl ParallelismMap {
    pub fn new(map: BTreeMap<String, u32>) -> Self {
        Self(map)
    }

    /// One thread per processing task.
    pub fn ones(topo: &TopologySpec) -> Self {
        Self(topo.processing_tasks().map(|t| (t.name.clone(), 1)).collect())
    }

    /// Spreads `total` threads as evenly as possible, earlier tasks first.
    pub fn uniform(topo: &TopologySpec, total: u32) -> Self {
        let names: Vec<&str> = topo.processing_tasks().map(|t| t.name.as_str()).collect();
        let n = names.len().max(1) as u32;
        Self(
            names
                .iter()
                .enumerate()
                .map(|(i, name)| {
                    let extra = u32::from((i as u32) < total % n);
                    (name.to_string(), (total / n + extra).max(1))
                })
                .collect(),
        )
    }

    pub fn get(&self, task: &str) -> Option<u32> {
        self.0.get(task).copied()
    }

    pub fn set(&mut self, task: &str, threads: u32) {
        self.0.insert(task.to_string(), threads);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn total(&self) -> u64 {
        self.0.values().map(|&v| u64::from(v)).sum()
    }

    pub fn as_map(&self) -> &BTreeMap<String, u32> {
        &self.0
    }

    /// Every count halved (integer division), never below one.
    pub fn halved(&self) -> Self {
        Self(self.0.iter().map(|(k, &v)| (k.clone(), (v / 2).max(1))).collect())
    }

    /// Names every missing, unknown or zero entry.
    pub fn violations(&self, topo: &TopologySpec) -> Vec<String> {
        let mut out = Vec::new();
        for t in topo.processing_tasks() {
            match self.0.get(&t.name) {
                None => out.push(format!("task {}: missing from parallelism map", t.name)),
                Some(0) => out.push(format!("task {}: thread count must be at least 1", t.name)),
                Some(_) => {}
            }
        }
        for name in self.0.keys() {
            match topo.task(name) {
                None => out.push(format!("task {name}: not in topology")),
                Some(t) if t.kind == TaskKind::Source => {
                    out.push(format!("task {name}: the source takes no worker threads"))
                }
                Some(_) => {}
            }
        }
        out
    }

    /// Thread count indexed by graph task id; zero for the source.
    pub(crate) fn per_task(&self, graph: &TaskGraph) -> Result<Vec<u32>, EngineError> {
        let mut out = Vec::with_capacity(graph.len());
        let mut violations = Vec::new();
        for t in graph.tasks() {
            if t.kind == TaskKind::Source {
                out.push(0);
                continue;
            }
            match self.0.get(&t.name) {
                Some(&n) if n > 0 => out.push(n),
                Some(_) => {
                    violations.push(format!("task {}: thread count must be at least 1", t.name));
                    out.push(0);
                }
                None => {
                    violations.push(format!("task {}: missing from parallelism map", t.name));
                    out.push(0);
                }
            }
        }
        for name in self.0.keys() {
            if graph.id_of(name).is_none() {
                violations.push(format!("task {name}: not in topology"));
            }
        }
        if violations.is_empty() {
            Ok(out)
        } else {
            Err(EngineError::InvalidParallelism(violations))
        }
    }
}

impl fmt::Display for ParallelismMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::fixtures::linear;

    #[test]
    fn uniform_spreads_remainder() {
        let topo = linear(&[1.0, 1.0, 1.0]);
        let p = ParallelismMap::uniform(&topo, 8);
        assert_eq!(p.total(), 8);
        assert_eq!(p.get("t0"), Some(3));
        assert_eq!(p.get("t2"), Some(2));
    }

    #[test]
    fn violations_are_named() {
        let topo = linear(&[1.0, 1.0]);
        let mut p = ParallelismMap::ones(&topo);
        assert!(p.violations(&topo).is_empty());
        p.0.remove("t1");
        p.set("ghost", 2);
        p.set("t0", 0);
        let v = p.violations(&topo);
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(v.iter().any(|m| m.contains("t1") && m.contains("missing")));
        let graph = topo.compile().unwrap();
        assert!(matches!(p.per_task(&graph), Err(EngineError::InvalidParallelism(_))));
    }

    #[test]
    fn halving_keeps_one() {
        let mut p = ParallelismMap::default();
        p.set("a", 1);
        p.set("b", 5);
        let h = p.halved();
        assert_eq!((h.get("a"), h.get("b")), (Some(1), Some(2)));
    }
}
