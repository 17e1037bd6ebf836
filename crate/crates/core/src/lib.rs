//! Stream-processing benchmark harness.
//!
//! Workloads describe a dataflow topology, a time-varying arrival rate, a
//! payload size distribution and a latency SLA. The harness generates a
//! reproducible event trace, sizes per-task parallelism, executes the
//! topology either on real threads or in a deterministic simulation, and
//! exports latency, SLA and CPU reports.

pub mod clock;
pub mod distributions;
pub mod engine;
pub mod generator;
pub mod metrics;
pub mod planner;
pub mod runner;
pub mod scalar;
pub mod topology;
pub mod workloads;

pub use engine::{ParallelismMap, RoutingMode};
pub use scalar::{Exact, Scalar};
pub use topology::TopologySpec;
pub use workloads::WorkloadSpec;

pub type RateProfile = distributions::RateProfile<f64>;
pub type SizeHistogram = distributions::SizeHistogram<f64>;
pub type PlanInput = planner::PlanInput<f64>;
pub type ExactRateProfile = distributions::RateProfile<Exact>;
pub type ExactSizeHistogram = distributions::SizeHistogram<Exact>;
pub type ExactPlanInput = planner::PlanInput<Exact>;
