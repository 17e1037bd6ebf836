//! Workload files: topology, arrival profile, payload sizes, SLA and planner
//! inputs in one JSON document.
//!
//! Hourly rates are written as events per hour and converted to events per
//! second at load. Edge selectivities may name a workload parameter
//! (`"additional_checks_pass"`) or its complement
//! (`"1 - additional_checks_pass"`), so a branch probability can be changed
//! without editing the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{short_digest, RateProfile, SizeBin, SizeHistogram};
use crate::engine::RoutingMode;
use crate::planner::PlanInput;
use crate::topology::{EdgeLabel, EdgeSpec, TaskSpec, TopologySpec};

pub const BUILTIN_NAMES: [&str; 4] = ["enrollment", "authentication", "enrollment-desk", "authentication-desk"];

/// JSON Schema describing the workload file format.
pub const SCHEMA: &str = include_str!("../workloads/workload.schema.json");

fn builtin_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "enrollment" => include_str!("../workloads/enrollment.workload"),
        "authentication" => include_str!("../workloads/authentication.workload"),
        "enrollment-desk" => include_str!("../workloads/enrollment-desk.workload"),
        "authentication-desk" => include_str!("../workloads/authentication-desk.workload"),
        _ => return None,
    })
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("invalid workload:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("unknown workload `{name}`; available: {}", BUILTIN_NAMES.join(", "))]
    Unknown { name: String },
    #[error("workload has no parameter `{0}`")]
    UnknownParameter(String),
}

/// A selectivity literal or a reference to a workload parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Selectivity {
    Value(f64),
    Param(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub from: String,
    pub to: String,
    pub label: EdgeLabel,
    pub selectivity: Selectivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HourlyProfile {
    pub bucket_seconds: f64,
    pub events_per_hour: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinEntry {
    /// Lower bound in `unit_bytes`.
    pub lo: f64,
    /// Upper bound (exclusive) in `unit_bytes`.
    pub hi: f64,
    pub prob: f64,
}

/// Either `constant_bytes` alone, or `unit_bytes` with `bins`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<Vec<BinEntry>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerEntry {
    pub headroom: f64,
    pub threads_per_node: u32,
    #[serde(default = "default_slots")]
    pub slots_per_node: u32,
    /// Overrides the profile's peak rate (events/second).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_rate: Option<f64>,
}

fn default_slots() -> u32 {
    8
}

/// On-disk workload document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadFile {
    pub name: String,
    #[serde(default)]
    pub notes: String,
    pub tasks: Vec<TaskSpec>,
    pub edges: Vec<EdgeEntry>,
    pub success_path: Vec<String>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    pub rate_profile_hourly: HourlyProfile,
    pub size_histogram: HistogramEntry,
    pub sla_ms: f64,
    #[serde(default)]
    pub routing: RoutingMode,
    pub planner: PlannerEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_size_bytes: Option<u64>,
}

/// A validated workload.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub name: String,
    pub notes: String,
    pub topology: TopologySpec,
    pub parameters: BTreeMap<String, f64>,
    pub rate_profile: RateProfile<f64>,
    pub size_histogram: SizeHistogram<f64>,
    pub sla_ms: f64,
    pub routing: RoutingMode,
    pub planner: PlannerEntry,
    /// Response payload size; `None` means equal to the input size.
    pub output_size_bytes: Option<u64>,
    file: WorkloadFile,
}

fn resolve_selectivity(s: &Selectivity, params: &BTreeMap<String, f64>) -> Result<f64, String> {
    match s {
        Selectivity::Value(v) => Ok(*v),
        Selectivity::Param(expr) => {
            let expr = expr.trim();
            let (name, complement) = match expr.strip_prefix("1 -") {
                Some(rest) => (rest.trim(), true),
                None => (expr, false),
            };
            let v = params.get(name).ok_or_else(|| format!("unknown parameter `{name}`"))?;
            Ok(if complement { 1.0 - v } else { *v })
        }
    }
}

fn build_histogram(h: &HistogramEntry) -> Result<SizeHistogram<f64>, String> {
    match (h.constant_bytes, h.unit_bytes, &h.bins) {
        (Some(c), None, None) => SizeHistogram::constant(c).map_err(|e| e.to_string()),
        (None, Some(unit), Some(bins)) => {
            let to_bytes = |v: f64| (v * unit as f64).round() as u64;
            SizeHistogram::new(
                bins.iter().map(|b| SizeBin { lo: to_bytes(b.lo), hi: to_bytes(b.hi), prob: b.prob }).collect(),
            )
            .map_err(|e| e.to_string())
        }
        _ => Err("expected either `constant_bytes`, or `unit_bytes` with `bins`".into()),
    }
}

impl WorkloadFile {
    fn resolve(self) -> Result<WorkloadSpec, WorkloadError> {
        let mut problems = Vec::new();
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            match resolve_selectivity(&e.selectivity, &self.parameters) {
                Ok(selectivity) => edges.push(EdgeSpec {
                    from: e.from.clone(),
                    to: e.to.clone(),
                    label: e.label,
                    selectivity,
                }),
                Err(msg) => problems.push(format!("edge {}->{}: {msg}", e.from, e.to)),
            }
        }
        for (name, v) in &self.parameters {
            if !(0.0..=1.0).contains(v) {
                problems.push(format!("parameter {name}: {v} outside [0, 1]"));
            }
        }
        let topology = TopologySpec { tasks: self.tasks.clone(), edges, success_path: self.success_path.clone() };
        problems.extend(topology.validate().iter().map(ToString::to_string));

        let hourly = &self.rate_profile_hourly;
        let rate_profile = RateProfile::from_hourly(hourly.bucket_seconds, &hourly.events_per_hour)
            .map_err(|e| problems.push(format!("rate_profile_hourly: {e}")))
            .ok();
        let size_histogram =
            build_histogram(&self.size_histogram).map_err(|e| problems.push(format!("size_histogram: {e}"))).ok();
        if !(self.sla_ms > 0.0) {
            problems.push(format!("sla_ms: must be positive, got {}", self.sla_ms));
        }
        if !(self.planner.headroom >= 1.0) {
            problems.push(format!("planner.headroom: must be at least 1, got {}", self.planner.headroom));
        }
        if self.planner.threads_per_node == 0 || self.planner.slots_per_node == 0 {
            problems.push("planner: threads_per_node and slots_per_node must be positive".into());
        }
        if self.output_size_bytes == Some(0) {
            problems.push("output_size_bytes: must be positive".into());
        }

        match (rate_profile, size_histogram) {
            (Some(rate_profile), Some(size_histogram)) if problems.is_empty() => Ok(WorkloadSpec {
                name: self.name.clone(),
                notes: self.notes.clone(),
                topology,
                parameters: self.parameters.clone(),
                rate_profile,
                size_histogram,
                sla_ms: self.sla_ms,
                routing: self.routing,
                planner: self.planner,
                output_size_bytes: self.output_size_bytes,
                file: self,
            }),
            _ => Err(WorkloadError::Invalid(problems)),
        }
    }
}

impl WorkloadSpec {
    /// Parses and validates a workload document.
    pub fn from_json(text: &str) -> Result<Self, WorkloadError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: WorkloadFile = serde_path_to_error::deserialize(de).map_err(|e| WorkloadError::Schema {
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        file.resolve()
    }

    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| WorkloadError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    /// One of [`BUILTIN_NAMES`].
    pub fn builtin(name: &str) -> Result<Self, WorkloadError> {
        let text = builtin_source(name).ok_or_else(|| WorkloadError::Unknown { name: name.to_string() })?;
        Self::from_json(text)
    }

    /// A builtin name, or else a path to a workload file.
    pub fn resolve(name_or_path: &str) -> Result<Self, WorkloadError> {
        if builtin_source(name_or_path).is_some() {
            return Self::builtin(name_or_path);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            Self::load(path)
        } else {
            Err(WorkloadError::Unknown { name: name_or_path.to_string() })
        }
    }

    /// Copy with a parameter replaced and selectivities re-derived.
    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self, WorkloadError> {
        let mut file = self.file.clone();
        match file.parameters.get_mut(name) {
            Some(v) => *v = value,
            None => return Err(WorkloadError::UnknownParameter(name.to_string())),
        }
        file.resolve()
    }

    pub fn file(&self) -> &WorkloadFile {
        &self.file
    }

    /// Short content hash over the canonical serialized document.
    pub fn digest(&self) -> String {
        let canon = serde_json::to_string(&self.file).unwrap_or_default();
        short_digest(canon.as_bytes())
    }

    /// Length of one profile bucket in seconds.
    pub fn bucket_seconds(&self) -> f64 {
        self.file.rate_profile_hourly.bucket_seconds
    }

    pub fn sla_us(&self) -> u64 {
        (self.sla_ms * 1e3).round() as u64
    }

    /// Planner inputs at the given rate multiplier.
    pub fn plan_input(&self, rate_scale: f64) -> PlanInput<f64> {
        let peak = self.planner.peak_rate.unwrap_or_else(|| self.rate_profile.peak_rate());
        PlanInput {
            peak_rate: peak * rate_scale,
            headroom: self.planner.headroom,
            threads_per_node: self.planner.threads_per_node,
            slots_per_node: self.planner.slots_per_node,
        }
    }
}
