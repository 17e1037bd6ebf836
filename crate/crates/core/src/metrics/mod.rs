//! Latency recording, SLA accounting, CPU sampling and report export.
//!
//! Timestamps are microseconds since the run clock origin. Exported files
//! print milliseconds with exactly three fractional digits, so the raw CSVs
//! carry the full recorded precision and can be recounted exactly.

mod cpu;
mod export;
mod report;
mod verify;

pub use cpu::{CpuSampler, CpuScope, CpuSeries};
pub use export::{export, format_ms, parse_ms, BUCKETS_HEADER, CPU_HEADER, SAMPLES_HEADER};
pub use report::{
    finalize, nearest_rank, BucketSummary, LatencySummary, ReportParams, RunMetadata, RunReport,
};
pub use verify::{verify_report, VerifyError, VerifyOutcome};

use std::collections::HashSet;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencySample {
    pub event_id: u64,
    pub ingress_us: u64,
    pub egress_us: u64,
    pub sink: Arc<str>,
    pub size_bytes: u64,
}

impl LatencySample {
    pub fn latency_us(&self) -> u64 {
        self.egress_us - self.ingress_us
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordError {
    #[error("event {0}: duplicate sample ignored")]
    Duplicate(u64),
    #[error("event {id}: egress {egress_us} us precedes ingress {ingress_us} us")]
    EgressBeforeIngress { id: u64, ingress_us: u64, egress_us: u64 },
}

/// Retains each event's latency sample exactly once.
///
/// Worker threads buffer samples locally and hand them over at drain, so
/// the collector itself is single-threaded.
#[derive(Debug, Default)]
pub struct MetricsCollector {
    samples: Vec<LatencySample>,
    seen: HashSet<u64>,
    rejected: u64,
}

impl MetricsCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, sample: LatencySample) -> Result<(), RecordError> {
        let outcome = if sample.egress_us < sample.ingress_us {
            Err(RecordError::EgressBeforeIngress {
                id: sample.event_id,
                ingress_us: sample.ingress_us,
                egress_us: sample.egress_us,
            })
        } else if !self.seen.insert(sample.event_id) {
            Err(RecordError::Duplicate(sample.event_id))
        } else {
            self.samples.push(sample);
            Ok(())
        };
        if let Err(e) = &outcome {
            self.rejected += 1;
            log::warn!("{e}");
        }
        outcome
    }

    /// Records every sample, returning how many were rejected.
    pub fn extend(&mut self, samples: impl IntoIterator<Item = LatencySample>) -> u64 {
        samples.into_iter().map(|s| self.record(s)).filter(Result::is_err).count() as u64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn samples(&self) -> &[LatencySample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LatencySample> {
        self.samples
    }
}
