use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::{CpuSeries, LatencySummary, RunReport};

pub const SAMPLES_HEADER: &str = "event_id,ingress_ms,egress_ms,sink";
pub const BUCKETS_HEADER: &str =
    "bucket,start_s,in_count,out_count,min_ms,median_ms,p95_ms,max_ms,violations";
pub const CPU_HEADER: &str = "t_s,util_pct";

pub const SUMMARY_FILE: &str = "summary.txt";
pub const SAMPLES_FILE: &str = "latency_samples.csv";
pub const BUCKETS_FILE: &str = "buckets.csv";
pub const CPU_FILE: &str = "cpu.csv";

/// Microseconds as milliseconds with exactly three fractional digits.
pub fn format_ms(us: u64) -> String {
    format!("{}.{:03}", us / 1000, us % 1000)
}

/// Inverse of [`format_ms`]; rejects anything that is not `digits.ddd`.
pub fn parse_ms(s: &str) -> Option<u64> {
    let (int, frac) = s.split_once('.')?;
    if int.is_empty() || frac.len() != 3 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    int.parse::<u64>().ok()?.checked_mul(1000)?.checked_add(frac.parse().ok()?)
}

/// Bucket start in seconds, rounded to the millisecond.
pub(crate) fn format_start_s(start_us: u64) -> String {
    format_ms((start_us + 500) / 1000)
}

pub(crate) fn format_latency_fields(l: Option<&LatencySummary>) -> String {
    match l {
        Some(l) => format!(
            "{},{},{},{}",
            format_ms(l.min_us),
            format_ms(l.median_us),
            format_ms(l.p95_us),
            format_ms(l.max_us)
        ),
        None => ",,,".to_string(),
    }
}

fn summary_text(r: &RunReport) -> String {
    let m = &r.metadata;
    let mut s = String::from("# streambench run summary\n");
    let _ = writeln!(s, "workload: {}", m.workload);
    let _ = writeln!(s, "workload_digest: {}", m.workload_digest);
    let _ = writeln!(s, "mode: {}", m.mode);
    let _ = writeln!(s, "seed: {}", m.seed);
    let _ = writeln!(s, "routing: {}", m.routing);
    let _ = writeln!(s, "time_scale: {}", m.time_scale);
    let _ = writeln!(s, "rate_scale: {}", m.rate_scale);
    let _ = writeln!(s, "parallelism: {}", m.parallelism);
    let _ = writeln!(s, "threads: {}", m.threads);
    let _ = writeln!(s, "sla_ms: {}", format_ms(r.params.sla_us));
    let _ = writeln!(s, "bucket_us: {}", r.params.bucket_us);
    let _ = writeln!(s, "span_us: {}", r.params.span_us);
    let _ = writeln!(s, "events: {}", r.total);
    let _ = writeln!(s, "violations: {}", r.violation_line());
    match &r.overall {
        Some(l) => {
            let _ = writeln!(s, "latency_min_ms: {}", format_ms(l.min_us));
            let _ = writeln!(s, "latency_median_ms: {}", format_ms(l.median_us));
            let _ = writeln!(s, "latency_p95_ms: {}", format_ms(l.p95_us));
            let _ = writeln!(s, "latency_max_ms: {}", format_ms(l.max_us));
        }
        None => s.push_str("latency: none (no samples)\n"),
    }
    for (sink, n) in &r.sink_counts {
        let _ = writeln!(s, "sink.{sink}: {n}");
    }
    match &r.cpu {
        CpuSeries::Samples(v) => match r.cpu.mean() {
            Some(mean) => {
                let _ = writeln!(s, "cpu: {} samples, mean {mean:.3}%", v.len());
            }
            None => s.push_str("cpu: no samples\n"),
        },
        CpuSeries::Unavailable(why) => {
            let _ = writeln!(s, "cpu: unavailable ({why})");
        }
    }
    s
}

/// Writes `summary.txt`, `latency_samples.csv`, `buckets.csv` and `cpu.csv`
/// into `dir`, creating it if needed.
pub fn export(report: &RunReport, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SUMMARY_FILE), summary_text(report))?;

    let mut w = BufWriter::new(fs::File::create(dir.join(SAMPLES_FILE))?);
    writeln!(w, "{SAMPLES_HEADER}")?;
    for s in &report.samples {
        writeln!(w, "{},{},{},{}", s.event_id, format_ms(s.ingress_us), format_ms(s.egress_us), s.sink)?;
    }
    w.flush()?;

    let mut w = BufWriter::new(fs::File::create(dir.join(BUCKETS_FILE))?);
    writeln!(w, "{BUCKETS_HEADER}")?;
    for b in &report.buckets {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            b.index,
            format_start_s(b.start_us),
            b.in_count,
            b.out_count,
            format_latency_fields(b.latency.as_ref()),
            b.violations
        )?;
    }
    w.flush()?;

    let mut w = BufWriter::new(fs::File::create(dir.join(CPU_FILE))?);
    writeln!(w, "{CPU_HEADER}")?;
    for c in report.cpu.samples() {
        writeln!(w, "{:.3},{:.3}", c.t_s, c.util_pct)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{finalize, LatencySample, ReportParams};
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn format_examples() {
        assert_eq!(format_ms(0), "0.000");
        assert_eq!(format_ms(1), "0.001");
        assert_eq!(format_ms(21_220_000), "21220.000");
        assert_eq!(format_start_s(6_000_000), "6.000");
        assert_eq!(parse_ms("12.5"), None);
        assert_eq!(parse_ms("-1.000"), None);
        assert_eq!(parse_ms(".123"), None);
        assert_eq!(parse_ms("3.014"), Some(3014));
    }

    proptest! {
        #[test]
        fn ms_round_trip(us in 0u64..u64::MAX / 1000) {
            prop_assert_eq!(parse_ms(&format_ms(us)), Some(us));
        }
    }

    #[test]
    fn empty_run_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let r = finalize(Vec::new(), &ReportParams::new(10.0, 1.0, 0.0));
        export(&r, dir.path()).unwrap();
        for (file, header) in [(SAMPLES_FILE, SAMPLES_HEADER), (BUCKETS_FILE, BUCKETS_HEADER), (CPU_FILE, CPU_HEADER)] {
            assert_eq!(fs::read_to_string(dir.path().join(file)).unwrap(), format!("{header}\n"));
        }
        let summary = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        assert!(summary.contains("violations: none (no samples)"));
    }

    #[test]
    fn rows_match_report() {
        let samples = (0..5u64)
            .map(|i| LatencySample {
                event_id: 4 - i,
                ingress_us: i * 400_000,
                egress_us: i * 400_000 + 1_234,
                sink: Arc::from("out"),
                size_bytes: 1,
            })
            .collect();
        let r = finalize(samples, &ReportParams::new(1.0, 1.0, 3.0));
        let dir = tempfile::tempdir().unwrap();
        export(&r, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join(SAMPLES_FILE)).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[1], "0,1600.000,1601.234,out");
        let buckets = fs::read_to_string(dir.path().join(BUCKETS_FILE)).unwrap();
        let rows: Vec<_> = buckets.lines().skip(1).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], "0,0.000,3,3,1.234,1.234,1.234,1.234,3");
        assert_eq!(rows[2], "2,2.000,0,0,,,,,0");
    }
}
