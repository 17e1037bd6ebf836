//! Recounts an exported report from its raw samples.
//!
//! The recount is written independently of [`super::finalize`] so that it
//! can catch aggregation bugs as well as edited files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::export::{
    format_latency_fields, format_start_s, parse_ms, BUCKETS_FILE, BUCKETS_HEADER, CPU_FILE, CPU_HEADER,
    SAMPLES_FILE, SAMPLES_HEADER, SUMMARY_FILE,
};
use super::report::{nearest_rank, violation_line, LatencySummary};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{file} line {line}: {message}")]
    Parse { file: &'static str, line: usize, message: String },
    #[error("report mismatch:\n  {}", .0.join("\n  "))]
    Mismatch(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyOutcome {
    pub events: u64,
    pub violations: u64,
    pub buckets: usize,
}

fn read(dir: &Path, file: &str) -> Result<String, VerifyError> {
    let path = dir.join(file);
    fs::read_to_string(&path).map_err(|source| VerifyError::Io { path, source })
}

fn parse_err(file: &'static str, line: usize, message: impl Into<String>) -> VerifyError {
    VerifyError::Parse { file, line, message: message.into() }
}

fn check_header(file: &'static str, text: &str, header: &str) -> Result<(), VerifyError> {
    match text.lines().next() {
        Some(h) if h == header => Ok(()),
        Some(h) => Err(parse_err(file, 1, format!("expected header `{header}`, found `{h}`"))),
        None => Err(parse_err(file, 1, "missing header")),
    }
}

struct Row {
    ingress_us: u64,
    egress_us: u64,
    sink: String,
}

fn parse_samples(text: &str) -> Result<Vec<Row>, VerifyError> {
    check_header(SAMPLES_FILE, text, SAMPLES_HEADER)?;
    let mut ids = HashSet::new();
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let n = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(parse_err(SAMPLES_FILE, n, format!("expected 4 fields, found {}", f.len())));
        }
        let id: u64 = f[0].parse().map_err(|_| parse_err(SAMPLES_FILE, n, format!("bad event_id `{}`", f[0])))?;
        if !ids.insert(id) {
            return Err(parse_err(SAMPLES_FILE, n, format!("duplicate event_id {id}")));
        }
        let ingress_us = parse_ms(f[1]).ok_or_else(|| parse_err(SAMPLES_FILE, n, format!("bad ingress_ms `{}`", f[1])))?;
        let egress_us = parse_ms(f[2]).ok_or_else(|| parse_err(SAMPLES_FILE, n, format!("bad egress_ms `{}`", f[2])))?;
        if egress_us < ingress_us {
            return Err(parse_err(SAMPLES_FILE, n, "egress precedes ingress"));
        }
        rows.push(Row { ingress_us, egress_us, sink: f[3].to_string() });
    }
    Ok(rows)
}

fn summary_fields(text: &str) -> HashMap<&str, &str> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once(": "))
        .collect()
}

fn required<'a>(s: &HashMap<&str, &'a str>, key: &'static str) -> Result<&'a str, VerifyError> {
    s.get(key).copied().ok_or_else(|| parse_err(SUMMARY_FILE, 0, format!("missing `{key}`")))
}

fn required_u64(s: &HashMap<&str, &str>, key: &'static str) -> Result<u64, VerifyError> {
    let v = required(s, key)?;
    v.parse().map_err(|_| parse_err(SUMMARY_FILE, 0, format!("`{key}` is not an integer: `{v}`")))
}

/// Recounts `latency_samples.csv` and compares the result with
/// `summary.txt` and `buckets.csv`.
pub fn verify_report(dir: &Path) -> Result<VerifyOutcome, VerifyError> {
    let summary_text = read(dir, SUMMARY_FILE)?;
    let summary = summary_fields(&summary_text);
    let sla_us = {
        let v = required(&summary, "sla_ms")?;
        parse_ms(v).ok_or_else(|| parse_err(SUMMARY_FILE, 0, format!("bad sla_ms `{v}`")))?
    };
    let bucket_us = required_u64(&summary, "bucket_us")?;
    let span_us = required_u64(&summary, "span_us")?;
    if bucket_us == 0 {
        return Err(parse_err(SUMMARY_FILE, 0, "bucket_us is zero"));
    }
    let rows = parse_samples(&read(dir, SAMPLES_FILE)?)?;

    let mut mismatches = Vec::new();
    let mut mismatch = |what: String, reported: &str, recounted: &str| {
        if reported != recounted {
            mismatches.push(format!("{what}: reported `{reported}`, recounted `{recounted}`"));
        }
    };

    let events = rows.len() as u64;
    let violations = rows.iter().filter(|r| r.egress_us - r.ingress_us > sla_us).count() as u64;
    mismatch("summary events".into(), required(&summary, "events")?, &events.to_string());
    mismatch("summary violations".into(), required(&summary, "violations")?, &violation_line(violations, events));

    let mut sinks: BTreeMap<&str, u64> = BTreeMap::new();
    for r in &rows {
        *sinks.entry(r.sink.as_str()).or_default() += 1;
    }
    let reported_sinks: BTreeMap<&str, &str> =
        summary.iter().filter_map(|(k, v)| k.strip_prefix("sink.").map(|s| (s, *v))).collect();
    for name in sinks.keys().chain(reported_sinks.keys()).collect::<HashSet<_>>() {
        mismatch(
            format!("summary sink.{name}"),
            reported_sinks.get(name).copied().unwrap_or("absent"),
            &sinks.get(name).map_or("absent".to_string(), |n| n.to_string()),
        );
    }

    let mut n_buckets = span_us.div_ceil(bucket_us) as usize;
    if n_buckets == 0 && !rows.is_empty() {
        n_buckets = 1;
    }
    let mut lat: Vec<Vec<u64>> = vec![Vec::new(); n_buckets];
    let mut outs = vec![0u64; n_buckets];
    let last = n_buckets.saturating_sub(1);
    for r in &rows {
        lat[((r.ingress_us / bucket_us) as usize).min(last)].push(r.egress_us - r.ingress_us);
        outs[((r.egress_us / bucket_us) as usize).min(last)] += 1;
    }
    let expected: Vec<String> = lat
        .iter_mut()
        .enumerate()
        .map(|(i, l)| {
            l.sort_unstable();
            let summary = (!l.is_empty()).then(|| LatencySummary {
                min_us: l[0],
                median_us: nearest_rank(l, 50.0).unwrap_or(0),
                p95_us: nearest_rank(l, 95.0).unwrap_or(0),
                max_us: l[l.len() - 1],
            });
            let v = l.iter().filter(|&&x| x > sla_us).count();
            format!(
                "{i},{},{},{},{},{v}",
                format_start_s(i as u64 * bucket_us),
                l.len(),
                outs[i],
                format_latency_fields(summary.as_ref())
            )
        })
        .collect();

    let buckets_text = read(dir, BUCKETS_FILE)?;
    check_header(BUCKETS_FILE, &buckets_text, BUCKETS_HEADER)?;
    let reported: Vec<&str> = buckets_text.lines().skip(1).collect();
    mismatch("buckets row count".into(), &reported.len().to_string(), &expected.len().to_string());
    let mut net: i64 = 0;
    for (i, row) in reported.iter().enumerate() {
        let f: Vec<&str> = row.split(',').collect();
        if let (Some(a), Some(b)) = (f.get(2).and_then(|x| x.parse::<i64>().ok()), f.get(3).and_then(|x| x.parse::<i64>().ok())) {
            net += a - b;
        }
        if let Some(e) = expected.get(i) {
            mismatch(format!("buckets row {i}"), row, e);
        }
    }
    if net != 0 {
        mismatches.push(format!("buckets in_count - out_count sums to {net}, expected 0"));
    }

    let cpu_text = read(dir, CPU_FILE)?;
    check_header(CPU_FILE, &cpu_text, CPU_HEADER)?;
    for (i, line) in cpu_text.lines().enumerate().skip(1) {
        let util = line.split_once(',').and_then(|(_, u)| u.parse::<f64>().ok());
        match util {
            Some(u) if (0.0..=100.0).contains(&u) => {}
            _ => mismatches.push(format!("cpu line {}: utilization out of range: `{line}`", i + 1)),
        }
    }

    if mismatches.is_empty() {
        Ok(VerifyOutcome { events, violations, buckets: n_buckets })
    } else {
        mismatches.sort();
        Err(VerifyError::Mismatch(mismatches))
    }
}
