use std::collections::BTreeMap;

use super::{CpuSeries, LatencySample};

/// Accounting parameters, stored at microsecond resolution so that
/// exported values round-trip exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportParams {
    pub sla_us: u64,
    pub bucket_us: u64,
    pub span_us: u64,
}

impl ReportParams {
    pub fn new(sla_ms: f64, bucket_s: f64, span_s: f64) -> Self {
        Self {
            sla_us: (sla_ms * 1e3).round() as u64,
            bucket_us: ((bucket_s * 1e6).round() as u64).max(1),
            span_us: (span_s * 1e6).round().max(0.0) as u64,
        }
    }

    /// Number of report buckets covering the span.
    pub fn bucket_count(&self) -> usize {
        self.span_us.div_ceil(self.bucket_us) as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetadata {
    pub workload: String,
    pub workload_digest: String,
    /// `sim` or `threaded`.
    pub mode: String,
    pub seed: u64,
    pub routing: String,
    pub time_scale: f64,
    pub rate_scale: f64,
    pub parallelism: String,
    pub threads: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencySummary {
    pub min_us: u64,
    pub median_us: u64,
    pub p95_us: u64,
    pub max_us: u64,
}

impl LatencySummary {
    /// Summary of an ascending-sorted, non-empty latency list.
    pub fn from_sorted(sorted: &[u64]) -> Option<Self> {
        Some(Self {
            min_us: *sorted.first()?,
            median_us: nearest_rank(sorted, 50.0)?,
            p95_us: nearest_rank(sorted, 95.0)?,
            max_us: *sorted.last()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketSummary {
    pub index: usize,
    pub start_us: u64,
    /// Events whose ingress falls in the bucket.
    pub in_count: u64,
    /// Events whose egress falls in the bucket (late egress counts in the
    /// final bucket).
    pub out_count: u64,
    /// Latencies of the events counted in `in_count`.
    pub latency: Option<LatencySummary>,
    pub violations: u64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub params: ReportParams,
    pub total: u64,
    pub violations: u64,
    pub overall: Option<LatencySummary>,
    pub buckets: Vec<BucketSummary>,
    pub sink_counts: BTreeMap<String, u64>,
    /// Raw samples ordered by event id.
    pub samples: Vec<LatencySample>,
    pub cpu: CpuSeries,
    pub metadata: RunMetadata,
}

impl RunReport {
    /// `None` for an empty run.
    pub fn violation_fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.violations as f64 / self.total as f64)
    }

    /// Human-readable violation tally, e.g. `17700 of 591270 (2.99%)`.
    pub fn violation_line(&self) -> String {
        violation_line(self.violations, self.total)
    }
}

pub(crate) fn violation_line(violations: u64, total: u64) -> String {
    if total == 0 {
        "none (no samples)".to_string()
    } else {
        format!("{violations} of {total} ({:.2}%)", violations as f64 * 100.0 / total as f64)
    }
}

/// Nearest-rank percentile of an ascending-sorted slice.
pub fn nearest_rank(sorted: &[u64], pct: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Aggregates samples into a report. A sample violates the SLA when its
/// latency is strictly greater than the threshold. Latencies are
/// attributed to the bucket of their ingress.
pub fn finalize(mut samples: Vec<LatencySample>, params: &ReportParams) -> RunReport {
    samples.sort_by_key(|s| s.event_id);
    let mut n_buckets = params.bucket_count();
    if n_buckets == 0 && !samples.is_empty() {
        n_buckets = 1;
    }
    let bucket_of = |t: u64| ((t / params.bucket_us) as usize).min(n_buckets.saturating_sub(1));

    let mut per_bucket: Vec<Vec<u64>> = vec![Vec::new(); n_buckets];
    let mut out_counts = vec![0u64; n_buckets];
    let mut violations_per = vec![0u64; n_buckets];
    let mut sink_counts = BTreeMap::new();
    let mut all = Vec::with_capacity(samples.len());
    let mut violations = 0;
    for s in &samples {
        let lat = s.latency_us();
        let b = bucket_of(s.ingress_us);
        per_bucket[b].push(lat);
        out_counts[bucket_of(s.egress_us)] += 1;
        if lat > params.sla_us {
            violations += 1;
            violations_per[b] += 1;
        }
        *sink_counts.entry(s.sink.to_string()).or_insert(0) += 1;
        all.push(lat);
    }
    all.sort_unstable();

    let buckets = per_bucket
        .into_iter()
        .enumerate()
        .map(|(index, mut lat)| {
            lat.sort_unstable();
            BucketSummary {
                index,
                start_us: index as u64 * params.bucket_us,
                in_count: lat.len() as u64,
                out_count: out_counts[index],
                latency: LatencySummary::from_sorted(&lat),
                violations: violations_per[index],
            }
        })
        .collect();

    RunReport {
        params: *params,
        total: samples.len() as u64,
        violations,
        overall: LatencySummary::from_sorted(&all),
        buckets,
        sink_counts,
        samples,
        cpu: CpuSeries::default(),
        metadata: RunMetadata::default(),
    }
}
