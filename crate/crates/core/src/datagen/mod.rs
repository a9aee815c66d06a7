//! Windowed training data: features from `[t - u, t)`, labels from `[t, t + w]`.

mod features;
mod split;

pub use features::{
    collect_examples, features_at, read_examples_csv, write_examples_csv, ActivityCounts, FeatureVector,
    InteractionMode, TrainingExample, ACTIVITY_FEATURES, EXAMPLES_SCHEMA,
};
pub use split::{split_dataset, split_examples, Splits};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation point `t`, feature window length `u`, response window `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineConfig {
    pub t: u32,
    pub u: u32,
    pub w: u32,
}

impl Default for TimelineConfig {
    fn default() -> Self {
        Self { t: 56, u: 28, w: 7 }
    }
}

impl TimelineConfig {
    pub fn new(t: u32, u: u32, w: u32) -> Result<Self> {
        let cfg = Self { t, u, w };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.u == 0 || self.w == 0 {
            return Err(Error::config("timeline windows u and w must be > 0"));
        }
        if self.t < self.u {
            return Err(Error::config(format!("timeline t={} must be >= u={}", self.t, self.u)));
        }
        Ok(())
    }

    /// Number of ticks a log must span: the response window is closed.
    pub fn required_ticks(&self) -> u32 {
        self.t + self.w + 1
    }
}

/// Lower edges `v_1 = 0 < v_2 < ... < v_K` of the feedback levels; level `k`
/// covers `[v_k, v_{k+1})` and the last level is unbounded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct BucketEdges(Vec<u32>);

impl BucketEdges {
    pub fn new(edges: Vec<u32>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::config("need at least two feedback levels"));
        }
        if edges[0] != 0 {
            return Err(Error::config("first bucket edge must be 0"));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("bucket edges must be strictly increasing"));
        }
        Ok(Self(edges))
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn edges(&self) -> &[u32] {
        &self.0
    }

    /// 1-based level containing `a`.
    pub fn bucketize(&self, a: u32) -> usize {
        self.0.partition_point(|&e| e <= a)
    }
}

impl Default for BucketEdges {
    fn default() -> Self {
        Self(vec![0, 1, 2, 5, 10, 25])
    }
}

impl TryFrom<Vec<u32>> for BucketEdges {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BucketEdges> for Vec<u32> {
    fn from(b: BucketEdges) -> Self {
        b.0
    }
}

/// Maps a feedback count to its level; see [`BucketEdges::bucketize`].
pub fn bucketize_feedback(a: u32, edges: &BucketEdges) -> usize {
    edges.bucketize(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bucket_examples() {
        let e = BucketEdges::default();
        assert_eq!(bucketize_feedback(0, &e), 1);
        assert_eq!(bucketize_feedback(7, &e), 4);
        assert_eq!(bucketize_feedback(1, &e), 2);
        assert_eq!(bucketize_feedback(25, &e), 6);
        assert_eq!(bucketize_feedback(10_000, &e), 6);
    }

    #[test]
    fn invalid_edges() {
        assert!(BucketEdges::new(vec![0]).is_err());
        assert!(BucketEdges::new(vec![1, 2]).is_err());
        assert!(BucketEdges::new(vec![0, 2, 2]).is_err());
        assert!(serde_json::from_str::<BucketEdges>("[0, 3, 1]").is_err());
    }

    #[test]
    fn timeline_validation() {
        assert!(TimelineConfig::new(28, 28, 7).is_ok());
        assert!(TimelineConfig::new(10, 28, 7).is_err());
        assert!(TimelineConfig::new(30, 0, 7).is_err());
        assert!(TimelineConfig::new(30, 28, 0).is_err());
    }

    fn linear_scan(a: u32, edges: &[u32]) -> usize {
        let mut level = 0;
        for (k, &lo) in edges.iter().enumerate() {
            let hi = edges.get(k + 1).copied().unwrap_or(u32::MAX);
            if lo <= a && (a < hi || hi == u32::MAX) {
                level = k + 1;
            }
        }
        level
    }

    #[test]
    fn agrees_with_linear_scan_on_random_counts() {
        use rand::Rng as _;
        let e = BucketEdges::default();
        let mut rng = crate::rng::rng_from(17);
        for _ in 0..10_000 {
            let a = rng.random_range(0..60u32);
            assert_eq!(e.bucketize(a), linear_scan(a, e.edges()));
        }
    }

    proptest! {
        #[test]
        fn every_count_maps_to_exactly_one_level(
            gaps in proptest::collection::vec(1u32..20, 1..8),
            a in 0u32..500,
        ) {
            let mut edges = vec![0];
            for g in gaps {
                let last = *edges.last().unwrap();
                edges.push(last + g);
            }
            let e = BucketEdges::new(edges.clone()).unwrap();
            let k = e.bucketize(a);
            prop_assert!(k >= 1 && k <= e.k());
            let containing = (1..=e.k())
                .filter(|&lvl| {
                    let lo = edges[lvl - 1];
                    let hi = edges.get(lvl).copied();
                    a >= lo && hi.is_none_or(|h| a < h)
                })
                .count();
            prop_assert_eq!(containing, 1);
            prop_assert_eq!(k, linear_scan(a, &edges));
        }
    }
}
