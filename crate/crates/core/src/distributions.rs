//! Event rate and payload size distributions.
//!
//! A [`RateProfile`] is a piecewise-constant arrival rate (events per
//! second) over consecutive buckets. A [`SizeHistogram`] is a probability
//! distribution over half-open byte ranges; sizes are uniform within a bin.

use std::fmt::Write as _;

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::Scalar;

/// Tolerance on `Σ prob = 1` for histograms.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("size histogram has no bins")]
    EmptyHistogram,
    #[error("bin {index}: lo ({lo}) must be below hi ({hi})")]
    EmptyBin { index: usize, lo: u64, hi: u64 },
    #[error("bin {index}: overlaps or precedes the previous bin")]
    BinOrder { index: usize },
    #[error("bin {index}: probability {prob} outside [0, 1]")]
    ProbabilityRange { index: usize, prob: f64 },
    #[error("bin probabilities sum to {sum}, expected 1")]
    ProbabilitySum { sum: f64 },
    #[error("bin {index}: sizes must be positive")]
    ZeroSize { index: usize },
    #[error("bucket {index}: duration must be positive, got {duration}")]
    NonPositiveDuration { index: usize, duration: f64 },
    #[error("bucket {index}: rate must be non-negative, got {rate}")]
    NegativeRate { index: usize, rate: f64 },
    #[error("time {t} s outside profile span [0, {span})")]
    OutOfSpan { t: f64, span: f64 },
    #[error("scale factor must be positive, got {0}")]
    NonPositiveFactor(f64),
}

/// One histogram bin covering sizes in `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeBin<T> {
    pub lo: u64,
    pub hi: u64,
    pub prob: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeHistogram<T> {
    bins: Vec<SizeBin<T>>,
    cumulative: Vec<f64>,
}

impl<T: Scalar> SizeHistogram<T> {
    /// Builds a validated histogram. Probabilities are never renormalized.
    pub fn new(bins: Vec<SizeBin<T>>) -> Result<Self, DistributionError> {
        if bins.is_empty() {
            return Err(DistributionError::EmptyHistogram);
        }
        let mut sum = T::zero();
        for (index, bin) in bins.iter().enumerate() {
            if bin.lo >= bin.hi {
                return Err(DistributionError::EmptyBin { index, lo: bin.lo, hi: bin.hi });
            }
            if bin.lo == 0 {
                return Err(DistributionError::ZeroSize { index });
            }
            if index > 0 && bin.lo < bins[index - 1].hi {
                return Err(DistributionError::BinOrder { index });
            }
            if bin.prob < T::zero() || bin.prob > T::one() {
                return Err(DistributionError::ProbabilityRange { index, prob: bin.prob.to_f64() });
            }
            sum = sum + bin.prob;
        }
        if !sum.approx_eq(T::one(), PROBABILITY_SUM_TOLERANCE) {
            return Err(DistributionError::ProbabilitySum { sum: sum.to_f64() });
        }
        let mut acc = 0.0;
        let cumulative = bins
            .iter()
            .map(|b| {
                acc += b.prob.to_f64();
                acc
            })
            .collect();
        Ok(Self { bins, cumulative })
    }

    /// Single-bin histogram that always yields `size`.
    pub fn constant(size: u64) -> Result<Self, DistributionError> {
        Self::new(vec![SizeBin { lo: size, hi: size.saturating_add(1), prob: T::one() }])
    }

    pub fn bins(&self) -> &[SizeBin<T>] {
        &self.bins
    }

    /// Index of the bin containing `size`, if any.
    pub fn bin_index(&self, size: u64) -> Option<usize> {
        self.bins.iter().position(|b| b.lo <= size && size < b.hi)
    }

    /// Draws a payload size: a bin by its probability, then a uniform size
    /// inside it.
    pub fn sample_size<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let idx = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            // cumulative may end a hair below 1.0
            .unwrap_or_else(|| {
                self.bins.iter().rposition(|b| b.prob > T::zero()).unwrap_or(self.bins.len() - 1)
            });
        let bin = &self.bins[idx];
        if bin.hi - bin.lo == 1 {
            bin.lo
        } else {
            rng.random_range(bin.lo..bin.hi)
        }
    }

    /// Stable content digest (hex SHA-256 prefix) used in trace metadata.
    pub fn digest(&self) -> String {
        let mut canon = String::from("size-histogram-v1\n");
        for b in &self.bins {
            let _ = writeln!(canon, "{},{},{:?}", b.lo, b.hi, b.prob.to_f64());
        }
        short_digest(canon.as_bytes())
    }

    pub fn cast<U: Scalar>(&self) -> SizeHistogram<U> {
        SizeHistogram {
            bins: self
                .bins
                .iter()
                .map(|b| SizeBin { lo: b.lo, hi: b.hi, prob: U::from_f64(b.prob.to_f64()) })
                .collect(),
            cumulative: self.cumulative.clone(),
        }
    }
}

/// A constant-rate interval of a [`RateProfile`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBucket<T> {
    pub duration_s: T,
    pub rate: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateProfile<T> {
    buckets: Vec<RateBucket<T>>,
}

impl<T: Scalar> RateProfile<T> {
    pub fn new(buckets: Vec<RateBucket<T>>) -> Result<Self, DistributionError> {
        for (index, b) in buckets.iter().enumerate() {
            if b.duration_s <= T::zero() {
                return Err(DistributionError::NonPositiveDuration {
                    index,
                    duration: b.duration_s.to_f64(),
                });
            }
            if b.rate < T::zero() {
                return Err(DistributionError::NegativeRate { index, rate: b.rate.to_f64() });
            }
        }
        Ok(Self { buckets })
    }

    pub fn empty() -> Self {
        Self { buckets: Vec::new() }
    }

    pub fn constant(duration_s: T, rate: T) -> Result<Self, DistributionError> {
        Self::new(vec![RateBucket { duration_s, rate }])
    }

    /// Builds a profile of equal-length buckets from per-hour event counts
    /// (`events/hour`), converting them to events per second.
    pub fn from_hourly(bucket_s: T, events_per_hour: &[T]) -> Result<Self, DistributionError> {
        let per_hour = T::from_u64(3600);
        Self::new(
            events_per_hour
                .iter()
                .map(|&v| RateBucket { duration_s: bucket_s, rate: v / per_hour })
                .collect(),
        )
    }

    pub fn buckets(&self) -> &[RateBucket<T>] {
        &self.buckets
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn span(&self) -> T {
        self.buckets.iter().fold(T::zero(), |acc, b| acc + b.duration_s)
    }

    /// Expected number of events, `Σ duration × rate`.
    pub fn expected_total(&self) -> T {
        self.buckets.iter().fold(T::zero(), |acc, b| acc + b.duration_s * b.rate)
    }

    /// Highest bucket rate, zero for an empty profile.
    pub fn peak_rate(&self) -> T {
        self.buckets.iter().fold(T::zero(), |acc, b| acc.max_of(b.rate))
    }

    /// Start offset of every bucket.
    pub fn bucket_starts(&self) -> Vec<T> {
        let mut t = T::zero();
        self.buckets
            .iter()
            .map(|b| {
                let start = t;
                t = t + b.duration_s;
                start
            })
            .collect()
    }

    /// Rate of the bucket containing `t`.
    pub fn instantaneous_rate(&self, t: T) -> Result<T, DistributionError> {
        let span = self.span();
        if t < T::zero() || t >= span {
            return Err(DistributionError::OutOfSpan { t: t.to_f64(), span: span.to_f64() });
        }
        let mut end = T::zero();
        for b in &self.buckets {
            end = end + b.duration_s;
            if t < end {
                return Ok(b.rate);
            }
        }
        // only reachable through rounding at the final boundary
        Ok(self.buckets[self.buckets.len() - 1].rate)
    }

    /// Divides every bucket duration by `factor`, keeping rates.
    pub fn compress_time(&self, factor: T) -> Result<Self, DistributionError> {
        if factor <= T::zero() {
            return Err(DistributionError::NonPositiveFactor(factor.to_f64()));
        }
        Ok(Self {
            buckets: self
                .buckets
                .iter()
                .map(|b| RateBucket { duration_s: b.duration_s / factor, rate: b.rate })
                .collect(),
        })
    }

    /// Multiplies every rate by `factor`, keeping durations.
    pub fn scale_rate(&self, factor: T) -> Result<Self, DistributionError> {
        if factor <= T::zero() {
            return Err(DistributionError::NonPositiveFactor(factor.to_f64()));
        }
        Ok(Self {
            buckets: self
                .buckets
                .iter()
                .map(|b| RateBucket { duration_s: b.duration_s, rate: b.rate * factor })
                .collect(),
        })
    }

    /// Restricts the profile to `[start, end)`, splitting buckets at the
    /// window edges. The result starts at time zero.
    pub fn window(&self, start: T, end: T) -> Self {
        let mut out = Vec::new();
        let mut t = T::zero();
        for b in &self.buckets {
            let b_start = t;
            let b_end = t + b.duration_s;
            t = b_end;
            let lo = b_start.max_of(start);
            let hi = if b_end < end { b_end } else { end };
            if hi > lo {
                out.push(RateBucket { duration_s: hi - lo, rate: b.rate });
            }
        }
        Self { buckets: out }
    }

    pub fn digest(&self) -> String {
        let mut canon = String::from("rate-profile-v1\n");
        for b in &self.buckets {
            let _ = writeln!(canon, "{:?},{:?}", b.duration_s.to_f64(), b.rate.to_f64());
        }
        short_digest(canon.as_bytes())
    }

    pub fn cast<U: Scalar>(&self) -> RateProfile<U> {
        RateProfile {
            buckets: self
                .buckets
                .iter()
                .map(|b| RateBucket {
                    duration_s: U::from_f64(b.duration_s.to_f64()),
                    rate: U::from_f64(b.rate.to_f64()),
                })
                .collect(),
        }
    }
}

pub(crate) fn short_digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    hex::encode(&hash[..8])
}
