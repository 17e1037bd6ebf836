//! Thread and node sizing from a workload's peak rate.
//!
//! Each worker task needs `peak_rate × reach × latency` concurrent servers on
//! average (Little's law); the headroom factor covers everything the model
//! leaves out.

use serde::Serialize;

use crate::engine::ParallelismMap;
use crate::scalar::Scalar;
use crate::topology::TopologySpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanInput<T> {
    /// Events per second at the source.
    pub peak_rate: T,
    pub headroom: T,
    pub threads_per_node: u32,
    pub slots_per_node: u32,
}

impl<T: Scalar> PlanInput<T> {
    pub fn new(peak_rate: T, headroom: T, threads_per_node: u32) -> Self {
        Self { peak_rate, headroom, threads_per_node, slots_per_node: 8 }
    }
}

/// Planner output ready for display.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub parallelism: ParallelismMap,
    pub total_threads: u64,
    pub nodes: u64,
    pub slots: u64,
}

/// `max(1, ceil(peak_rate × reach_t × latency_t / 1000 × headroom))` for
/// every task except the source.
pub fn min_parallelism<T: Scalar>(topo: &TopologySpec, plan: &PlanInput<T>) -> ParallelismMap {
    let reach = topo.reach::<T>();
    let thousand = T::from_u64(1000);
    ParallelismMap::new(
        topo.processing_tasks()
            .map(|t| {
                let r = reach.get(&t.name).copied().unwrap_or_else(T::zero);
                let load = plan.peak_rate * r * T::from_f64(t.service_latency_ms) / thousand * plan.headroom;
                let threads = load.ceil_u64().max(1);
                (t.name.clone(), u32::try_from(threads).unwrap_or(u32::MAX))
            })
            .collect(),
    )
}

/// Nodes needed to host every thread at the per-node cap.
pub fn slot_allocation<T>(par: &ParallelismMap, plan: &PlanInput<T>) -> u64 {
    par.total().div_ceil(u64::from(plan.threads_per_node.max(1)))
}

pub fn plan<T: Scalar>(topo: &TopologySpec, input: &PlanInput<T>) -> Plan {
    let parallelism = min_parallelism(topo, input);
    let nodes = slot_allocation(&parallelism, input);
    Plan {
        total_threads: parallelism.total(),
        slots: nodes * u64::from(input.slots_per_node),
        nodes,
        parallelism,
    }
}
