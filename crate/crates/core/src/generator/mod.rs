//! Trace pre-generation, persistence and wall-clock replay.
//!
//! [`generate`] turns a rate profile and a size histogram into a sorted list
//! of timestamped, sized events. Each bucket receives exactly
//! `round(duration × rate)` events. Payload bytes are not stored; they are
//! materialized from the size field at emission time
//! ([`synthetic_payload`]).

mod replay;
mod trace_file;

pub use replay::{replay, ReplayError, ReplayOptions, ReplayStats};
pub use trace_file::{read_trace, write_trace, TraceParseError, TraceReadError};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::distributions::{RateProfile, SizeHistogram};

pub const GENERATOR_VERSION: &str = "1";

/// Stream-splitting constant for the arrival RNG so size draws do not
/// depend on the arrival pattern.
const ARRIVAL_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventRecord {
    pub id: u64,
    /// Milliseconds from trace start.
    pub offset_ms: u64,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArrivalPattern {
    /// Deterministic, evenly spaced arrivals within each bucket.
    #[default]
    Even,
    /// Seeded exponential gaps, renormalized so each bucket keeps its count.
    Poisson,
}

impl fmt::Display for ArrivalPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArrivalPattern::Even => "even",
            ArrivalPattern::Poisson => "poisson",
        })
    }
}

impl FromStr for ArrivalPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "even" => Ok(Self::Even),
            "poisson" => Ok(Self::Poisson),
            other => Err(format!("unknown arrival pattern {other:?} (expected even|poisson)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceMetadata {
    pub seed: u64,
    pub profile_digest: String,
    pub histogram_digest: String,
    pub generator_version: String,
    pub arrivals: ArrivalPattern,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub metadata: TraceMetadata,
    pub records: Vec<EventRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Offset of the last event, zero when empty.
    pub fn last_offset_ms(&self) -> u64 {
        self.records.last().map_or(0, |r| r.offset_ms)
    }

    /// Warnings for metadata digests that differ from the given configs.
    pub fn digest_warnings(
        &self,
        profile: &RateProfile<f64>,
        hist: &SizeHistogram<f64>,
    ) -> Vec<String> {
        let mut out = Vec::new();
        let p = profile.digest();
        if self.metadata.profile_digest != p {
            out.push(format!(
                "trace profile digest {} does not match workload profile {p}",
                self.metadata.profile_digest
            ));
        }
        let h = hist.digest();
        if self.metadata.histogram_digest != h {
            out.push(format!(
                "trace histogram digest {} does not match workload histogram {h}",
                self.metadata.histogram_digest
            ));
        }
        out
    }

    /// SHA-256 over the records and metadata, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let m = &self.metadata;
        hasher.update(
            format!(
                "{}|{}|{}|{}|{}\n",
                m.seed, m.profile_digest, m.histogram_digest, m.generator_version, m.arrivals
            )
            .as_bytes(),
        );
        for r in &self.records {
            hasher.update(r.id.to_le_bytes());
            hasher.update(r.offset_ms.to_le_bytes());
            hasher.update(r.size_bytes.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("bucket {index}: expected count {count} is not a finite non-negative number")]
    BadCount { index: usize, count: f64 },
}

/// Generates an evenly spaced trace.
pub fn generate(
    profile: &RateProfile<f64>,
    hist: &SizeHistogram<f64>,
    seed: u64,
) -> Result<Trace, GeneratorError> {
    generate_with(profile, hist, seed, ArrivalPattern::Even)
}

pub fn generate_with(
    profile: &RateProfile<f64>,
    hist: &SizeHistogram<f64>,
    seed: u64,
    arrivals: ArrivalPattern,
) -> Result<Trace, GeneratorError> {
    let mut size_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gap_rng = ChaCha8Rng::seed_from_u64(seed ^ ARRIVAL_STREAM);

    let counts = bucket_counts(profile)?;
    let mut records = Vec::with_capacity(counts.iter().sum::<u64>() as usize);
    let mut bucket_start_s = 0.0;
    let mut gaps = Vec::new();
    for (b, &n) in profile.buckets().iter().zip(&counts) {
        let start_ms = (bucket_start_s * 1000.0_f64).round() as u64;
        bucket_start_s += b.duration_s;
        let end_ms = (bucket_start_s * 1000.0_f64).round() as u64;
        let width = (end_ms - start_ms) as u128;
        match arrivals {
            ArrivalPattern::Even => {
                for j in 0..n {
                    let offset = start_ms + (j as u128 * width / n as u128) as u64;
                    push(&mut records, offset, hist, &mut size_rng);
                }
            }
            ArrivalPattern::Poisson => {
                gaps.clear();
                gaps.extend((0..=n).map(|_| -> f64 { Exp1.sample(&mut gap_rng) }));
                let total: f64 = gaps.iter().sum();
                let mut acc = 0.0;
                for g in &gaps[..n as usize] {
                    acc += g;
                    let frac = (acc / total).min(1.0);
                    let offset = start_ms + ((frac * width as f64).floor() as u64).min(
                        (width as u64).saturating_sub(1),
                    );
                    push(&mut records, offset, hist, &mut size_rng);
                }
            }
        }
    }

    Ok(Trace {
        metadata: TraceMetadata {
            seed,
            profile_digest: profile.digest(),
            histogram_digest: hist.digest(),
            generator_version: GENERATOR_VERSION.to_string(),
            arrivals,
        },
        records,
    })
}

fn push(records: &mut Vec<EventRecord>, offset_ms: u64, hist: &SizeHistogram<f64>, rng: &mut ChaCha8Rng) {
    let id = records.len() as u64;
    records.push(EventRecord { id, offset_ms, size_bytes: hist.sample_size(rng) });
}

/// Per-bucket event counts, `round(duration × rate)` each.
pub fn bucket_counts(profile: &RateProfile<f64>) -> Result<Vec<u64>, GeneratorError> {
    profile
        .buckets()
        .iter()
        .enumerate()
        .map(|(index, b)| {
            let count = (b.duration_s * b.rate).round();
            if count.is_finite() && count >= 0.0 {
                Ok(count as u64)
            } else {
                Err(GeneratorError::BadCount { index, count })
            }
        })
        .collect()
}

/// Pseudo-random payload of `size` bytes, reproducible from the event id.
pub fn synthetic_payload(id: u64, size: u64) -> Vec<u8> {
    let mut buf = vec![0u8; size as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(id);
    rng.fill_bytes(&mut buf);
    buf
}

/// Payload generator that reuses one RNG; cheaper than [`synthetic_payload`]
/// in tight emission loops.
pub struct PayloadSource {
    rng: ChaCha8Rng,
}

impl PayloadSource {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn payload(&mut self, size: u64) -> Vec<u8> {
        let mut buf = vec![0u8; size as usize];
        self.rng.fill_bytes(&mut buf);
        buf
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RateBucket;

    fn const_hist() -> SizeHistogram<f64> {
        SizeHistogram::constant(4096).unwrap()
    }

    #[test]
    fn even_spacing_within_bucket() {
        let p = RateProfile::constant(10.0, 2.0).unwrap();
        let t = generate(&p, &const_hist(), 1).unwrap();
        let offsets: Vec<u64> = t.records.iter().map(|r| r.offset_ms).collect();
        let expected: Vec<u64> = (0..20).map(|i| i * 500).collect();
        assert_eq!(offsets, expected);
        assert!(t.records.iter().enumerate().all(|(i, r)| r.id == i as u64 && r.size_bytes == 4096));
    }

    #[test]
    fn per_bucket_counts_are_rounded() {
        let p = RateProfile::new(vec![
            RateBucket { duration_s: 6.0, rate: 65_000.0 / 3600.0 },
            RateBucket { duration_s: 6.0, rate: 0.1 },
            RateBucket { duration_s: 6.0, rate: 0.05 },
        ])
        .unwrap();
        assert_eq!(bucket_counts(&p).unwrap(), vec![108, 1, 0]);
        let t = generate(&p, &const_hist(), 5).unwrap();
        assert_eq!(t.len(), 109);
        assert!(t.records[..108].iter().all(|r| r.offset_ms < 6000));
        assert!((6000..12_000).contains(&t.records[108].offset_ms));
    }

    #[test]
    fn empty_profile_gives_empty_trace() {
        let t = generate(&RateProfile::empty(), &const_hist(), 0).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.last_offset_ms(), 0);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = RateProfile::from_hourly(60.0, &[36_000.0, 72_000.0]).unwrap();
        let h = SizeHistogram::new(vec![
            crate::distributions::SizeBin { lo: 100, hi: 200, prob: 0.5 },
            crate::distributions::SizeBin { lo: 200, hi: 900, prob: 0.5 },
        ])
        .unwrap();
        for arrivals in [ArrivalPattern::Even, ArrivalPattern::Poisson] {
            let a = generate_with(&p, &h, 42, arrivals).unwrap();
            let b = generate_with(&p, &h, 42, arrivals).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.content_hash(), b.content_hash());
            assert_ne!(a.content_hash(), generate_with(&p, &h, 43, arrivals).unwrap().content_hash());
        }
    }

    #[test]
    fn poisson_keeps_bucket_counts_and_order() {
        let p = RateProfile::new(vec![
            RateBucket { duration_s: 10.0, rate: 50.0 },
            RateBucket { duration_s: 10.0, rate: 5.0 },
        ])
        .unwrap();
        let t = generate_with(&p, &const_hist(), 7, ArrivalPattern::Poisson).unwrap();
        assert_eq!(t.len(), 550);
        assert!(t.records.windows(2).all(|w| w[0].offset_ms <= w[1].offset_ms));
        assert_eq!(t.records.iter().filter(|r| r.offset_ms < 10_000).count(), 500);
        assert!(t.records.iter().all(|r| r.offset_ms < 20_000));
    }

    #[test]
    fn digest_warnings_flag_mismatch() {
        let p = RateProfile::constant(1.0, 3.0).unwrap();
        let t = generate(&p, &const_hist(), 1).unwrap();
        assert!(t.digest_warnings(&p, &const_hist()).is_empty());
        let other = RateProfile::constant(1.0, 4.0).unwrap();
        assert_eq!(t.digest_warnings(&other, &const_hist()).len(), 1);
    }

    #[test]
    fn payloads_have_requested_size() {
        assert_eq!(synthetic_payload(3, 4096).len(), 4096);
        assert_eq!(synthetic_payload(3, 64), synthetic_payload(3, 64));
        assert_eq!(PayloadSource::new(1).payload(10).len(), 10);
    }
}
