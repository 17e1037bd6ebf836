//! Edge selection for events leaving a task.
//!
//! Quota routing is a sequential apportionment: at the `n`-th event an edge
//! is eligible only while its count stays below `n × selectivity` (upper
//! quota), and among eligible edges the one with the largest
//! `selectivity / (count + 1)` wins. Every edge count then stays within one
//! event of `n × selectivity` at every prefix `n`.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::topology::{TaskGraph, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingMode {
    /// Seeded random draw proportional to selectivity.
    #[serde(alias = "prob")]
    Probabilistic,
    /// Deterministic error-diffusion that tracks `n × selectivity`.
    #[default]
    Quota,
}

impl fmt::Display for RoutingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoutingMode::Probabilistic => "prob",
            RoutingMode::Quota => "quota",
        })
    }
}

impl FromStr for RoutingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prob" | "probabilistic" => Ok(Self::Probabilistic),
            "quota" => Ok(Self::Quota),
            other => Err(format!("unknown routing mode {other:?} (expected quota|prob)")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum EdgeChooser {
    Single,
    Probabilistic { cumulative: Vec<f64>, rng: ChaCha8Rng },
    Quota { selectivity: Vec<f64>, counts: Vec<u64>, routed: u64 },
}

impl EdgeChooser {
    pub fn new(selectivities: &[f64], mode: RoutingMode, seed: u64) -> Self {
        if selectivities.len() <= 1 {
            return Self::Single;
        }
        match mode {
            RoutingMode::Probabilistic => {
                let mut acc = 0.0;
                Self::Probabilistic {
                    cumulative: selectivities
                        .iter()
                        .map(|s| {
                            acc += s;
                            acc
                        })
                        .collect(),
                    rng: ChaCha8Rng::seed_from_u64(seed),
                }
            }
            RoutingMode::Quota => Self::Quota {
                selectivity: selectivities.to_vec(),
                counts: vec![0; selectivities.len()],
                routed: 0,
            },
        }
    }

    /// Index of the outgoing edge for the next event.
    pub fn choose(&mut self) -> usize {
        match self {
            EdgeChooser::Single => 0,
            EdgeChooser::Probabilistic { cumulative, rng } => {
                let u: f64 = rng.random();
                cumulative.iter().position(|&c| u < c).unwrap_or_else(|| {
                    // rounding left the last cumulative value below 1
                    cumulative.len() - 1
                })
            }
            EdgeChooser::Quota { selectivity, counts, routed } => {
                *routed += 1;
                let n = *routed as f64;
                let mut best: Option<(usize, f64)> = None;
                for (e, (&s, &c)) in selectivity.iter().zip(counts.iter()).enumerate() {
                    let quota = n * s;
                    // strict upper quota, with slack for representation error
                    if (c as f64) >= quota - 1e-9 * quota.max(1.0) {
                        continue;
                    }
                    let priority = s / (c as f64 + 1.0);
                    if best.is_none_or(|(_, p)| priority > p) {
                        best = Some((e, priority));
                    }
                }
                let e = best.map_or(0, |(e, _)| e);
                counts[e] += 1;
                e
            }
        }
    }
}

/// Per-task edge choosers for one run.
#[derive(Debug)]
pub struct Router {
    choosers: Vec<Mutex<EdgeChooser>>,
}

impl Router {
    pub fn new(graph: &TaskGraph, mode: RoutingMode, seed: u64) -> Self {
        let choosers = graph
            .tasks()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let sel: Vec<f64> = t.outgoing.iter().map(|e| e.selectivity).collect();
                let task_seed = seed ^ (i as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F);
                Mutex::new(EdgeChooser::new(&sel, mode, task_seed))
            })
            .collect();
        Self { choosers }
    }

    /// Outgoing edge index chosen for an event leaving `task`.
    pub fn route(&self, task: TaskId) -> usize {
        self.choosers[task as usize].lock().expect("router lock poisoned").choose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: replays the accumulator rule on counts only and
    /// reports the largest |count - n × s| seen at any prefix.
    fn max_prefix_deviation(sel: &[f64], n: u64) -> f64 {
        let mut chooser = EdgeChooser::new(sel, RoutingMode::Quota, 0);
        let mut counts = vec![0u64; sel.len()];
        let mut worst: f64 = 0.0;
        for k in 1..=n {
            counts[chooser.choose()] += 1;
            for (c, s) in counts.iter().zip(sel) {
                worst = worst.max((*c as f64 - k as f64 * s).abs());
            }
        }
        worst
    }

    #[test]
    fn single_edge_always_taken() {
        let mut c = EdgeChooser::new(&[1.0], RoutingMode::Probabilistic, 1);
        assert!((0..100).all(|_| c.choose() == 0));
    }

    #[test]
    fn quota_split_is_exact() {
        let mut c = EdgeChooser::new(&[0.98, 0.02], RoutingMode::Quota, 0);
        let mut counts = [0u32; 2];
        for _ in 0..10_000 {
            counts[c.choose()] += 1;
        }
        assert_eq!(counts, [9_800, 200]);
    }

    #[test]
    fn probabilistic_split_within_three_sigma() {
        let mut c = EdgeChooser::new(&[0.98, 0.02], RoutingMode::Probabilistic, 17);
        let pass = (0..10_000).filter(|_| c.choose() == 0).count() as f64;
        let sigma = (10_000.0_f64 * 0.98 * 0.02).sqrt();
        assert!((pass - 9_800.0).abs() <= 3.0 * sigma, "{pass}");
    }

    #[test]
    fn zero_selectivity_edge_never_taken() {
        let mut c = EdgeChooser::new(&[0.0, 1.0], RoutingMode::Quota, 0);
        assert!((0..1000).all(|_| c.choose() == 1));
        let mut c = EdgeChooser::new(&[0.0, 1.0], RoutingMode::Probabilistic, 3);
        assert!((0..1000).all(|_| c.choose() == 1));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("quota".parse::<RoutingMode>().unwrap(), RoutingMode::Quota);
        assert_eq!("prob".parse::<RoutingMode>().unwrap(), RoutingMode::Probabilistic);
        assert!("x".parse::<RoutingMode>().is_err());
    }

    proptest! {
        #[test]
        fn quota_deviation_below_one(weights in proptest::collection::vec(0.0f64..1.0, 2..7)) {
            let total: f64 = weights.iter().sum();
            prop_assume!(total > 1e-3);
            let sel: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let worst = max_prefix_deviation(&sel, 2_000);
            prop_assert!(worst < 1.0 + 1e-9, "deviation {}", worst);
        }
    }
}
