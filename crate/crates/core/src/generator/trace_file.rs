//! Trace CSV format.
//!
//! ```text
//! # streambench trace
//! # generator_version=1
//! # seed=42
//! # arrivals=even
//! # profile_digest=3f1c9a0b7d2e4f11
//! # histogram_digest=08aa51c3e9b0d6f2
//! id,offset_ms,size_bytes
//! 0,0,4096
//! 1,500,4096
//! ```
//!
//! All fields are integers so equal traces produce byte-identical files.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::{ArrivalPattern, EventRecord, Trace, TraceMetadata};

pub const TRACE_HEADER: &str = "id,offset_ms,size_bytes";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum TraceReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Parse(#[from] TraceParseError),
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_to(trace, &mut out)?;
    out.flush()
}

pub fn write_to<W: Write>(trace: &Trace, out: &mut W) -> io::Result<()> {
    let m = &trace.metadata;
    writeln!(out, "# streambench trace")?;
    writeln!(out, "# generator_version={}", m.generator_version)?;
    writeln!(out, "# seed={}", m.seed)?;
    writeln!(out, "# arrivals={}", m.arrivals)?;
    writeln!(out, "# profile_digest={}", m.profile_digest)?;
    writeln!(out, "# histogram_digest={}", m.histogram_digest)?;
    writeln!(out, "{TRACE_HEADER}")?;
    for r in &trace.records {
        writeln!(out, "{},{},{}", r.id, r.offset_ms, r.size_bytes)?;
    }
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace, TraceReadError> {
    read_from(BufReader::new(File::open(path)?))
}

pub fn read_from<R: BufRead>(input: R) -> Result<Trace, TraceReadError> {
    let mut seed = None;
    let mut profile_digest = None;
    let mut histogram_digest = None;
    let mut generator_version = None;
    let mut arrivals = None;
    let mut header_seen = false;
    let mut records = Vec::new();

    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let err = |message: String| TraceParseError { line: line_no, message };
        if !header_seen {
            if let Some(meta) = line.strip_prefix('#') {
                let Some((key, value)) = meta.trim().split_once('=') else {
                    continue;
                };
                let value = value.trim();
                match key.trim() {
                    "seed" => {
                        seed = Some(value.parse::<u64>().map_err(|e| err(format!("bad seed: {e}")))?)
                    }
                    "profile_digest" => profile_digest = Some(value.to_string()),
                    "histogram_digest" => histogram_digest = Some(value.to_string()),
                    "generator_version" => generator_version = Some(value.to_string()),
                    "arrivals" => arrivals = Some(value.parse::<ArrivalPattern>().map_err(err)?),
                    _ => {}
                }
                continue;
            }
            if line.trim() != TRACE_HEADER {
                return Err(err(format!("expected header {TRACE_HEADER:?}, found {line:?}")).into());
            }
            header_seen = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |name: &str| -> Result<u64, TraceParseError> {
            let raw = fields.next().ok_or_else(|| err(format!("missing field {name}")))?;
            raw.trim().parse::<u64>().map_err(|e| err(format!("bad {name} {raw:?}: {e}")))
        };
        let record = EventRecord {
            id: next("id")?,
            offset_ms: next("offset_ms")?,
            size_bytes: next("size_bytes")?,
        };
        if fields.next().is_some() {
            return Err(err("too many fields".into()).into());
        }
        if record.id != records.len() as u64 {
            return Err(err(format!("expected id {}, found {}", records.len(), record.id)).into());
        }
        if let Some(prev) = records.last() {
            let prev: &EventRecord = prev;
            if record.offset_ms < prev.offset_ms {
                return Err(err(format!("offset {} decreases", record.offset_ms)).into());
            }
        }
        if record.size_bytes == 0 {
            return Err(err("size_bytes must be positive".into()).into());
        }
        records.push(record);
    }

    if !header_seen {
        return Err(TraceParseError { line: 0, message: "missing header line".into() }.into());
    }
    let missing = |what: &str| TraceParseError { line: 0, message: format!("missing metadata {what}") };
    Ok(Trace {
        metadata: TraceMetadata {
            seed: seed.ok_or_else(|| missing("seed"))?,
            profile_digest: profile_digest.ok_or_else(|| missing("profile_digest"))?,
            histogram_digest: histogram_digest.ok_or_else(|| missing("histogram_digest"))?,
            generator_version: generator_version.ok_or_else(|| missing("generator_version"))?,
            arrivals: arrivals.unwrap_or_default(),
        },
        records,
    })
}
