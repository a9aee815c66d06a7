//! Feed scoring: `alpha * consumer_utility + (1 - alpha) * p_feedback * C`.

mod sweep;

pub use sweep::{
    feedback_gini, read_sweep_csv, sweep_alpha, top_quartile_creators, write_sweep_csv, SweepConfig, SweepRow,
    SWEEP_SCHEMA,
};

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ecosystem::{EventKind, EventLog};
use crate::error::{Error, Result};
use crate::sensitivity::{SensitivityCurve, UtilitySnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    ConsumerOnly,
    Heuristic,
    PCreateDelta,
    PCreateParam,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] =
        [PolicyKind::ConsumerOnly, PolicyKind::Heuristic, PolicyKind::PCreateDelta, PolicyKind::PCreateParam];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::ConsumerOnly => "consumer_only",
            PolicyKind::Heuristic => "heuristic",
            PolicyKind::PCreateDelta => "pcreate_delta",
            PolicyKind::PCreateParam => "pcreate_param",
        }
    }

    pub fn needs_snapshot(self) -> bool {
        matches!(self, PolicyKind::PCreateDelta | PolicyKind::PCreateParam)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::config(format!("unknown policy {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct RankingPolicy {
    pub kind: PolicyKind,
    pub alpha: f64,
    pub snapshot: Option<Arc<UtilitySnapshot>>,
}

impl RankingPolicy {
    pub fn new(kind: PolicyKind, alpha: f64, snapshot: Option<Arc<UtilitySnapshot>>) -> Result<Self> {
        let p = Self { kind, alpha, snapshot };
        p.check()?;
        Ok(p)
    }

    pub fn consumer_only() -> Self {
        Self { kind: PolicyKind::ConsumerOnly, alpha: 1.0, snapshot: None }
    }

    pub fn heuristic(alpha: f64) -> Self {
        Self { kind: PolicyKind::Heuristic, alpha, snapshot: None }
    }

    pub fn pcreate_delta(alpha: f64, snapshot: Arc<UtilitySnapshot>) -> Self {
        Self { kind: PolicyKind::PCreateDelta, alpha, snapshot: Some(snapshot) }
    }

    pub fn pcreate_param(alpha: f64, snapshot: Arc<UtilitySnapshot>) -> Self {
        Self { kind: PolicyKind::PCreateParam, alpha, snapshot: Some(snapshot) }
    }

    pub fn is_consumer_only(&self) -> bool {
        self.kind == PolicyKind::ConsumerOnly
    }

    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.kind.needs_snapshot() && self.snapshot.is_none() {
            return Err(Error::config(format!("{} policy requires a utility snapshot", self.kind)));
        }
        Ok(())
    }

    /// Also checks that the snapshot covers every creator.
    pub fn validate(&self, n_users: usize) -> Result<()> {
        self.check()?;
        if let (true, Some(s)) = (self.kind.needs_snapshot(), &self.snapshot) {
            if s.len() < n_users {
                return Err(Error::config(format!("snapshot covers {} of {n_users} users", s.len())));
            }
        }
        Ok(())
    }

    fn curve(&self, creator: u32) -> Option<&SensitivityCurve> {
        self.snapshot.as_ref().and_then(|s| s.curve(creator))
    }

    /// Creator-side utility `C` for a creator expecting `expected_feedback`.
    pub fn creator_utility(&self, creator: u32, expected_feedback: f64) -> f64 {
        match self.kind {
            PolicyKind::ConsumerOnly => 0.0,
            PolicyKind::Heuristic => heuristic_utility(expected_feedback),
            PolicyKind::PCreateDelta => self.curve(creator).map_or(0.0, pcreate_utility_delta),
            PolicyKind::PCreateParam => {
                self.curve(creator).map_or(0.0, |c| pcreate_utility_param(c, expected_feedback))
            }
        }
    }

    pub fn feed_score(&self, consumer_utility: f64, p_feedback: f64, creator_utility: f64) -> f64 {
        if self.is_consumer_only() || self.alpha == 1.0 {
            consumer_utility
        } else {
            feed_score(self.alpha, consumer_utility, p_feedback, creator_utility)
        }
    }
}

pub fn feed_score(alpha: f64, consumer_utility: f64, p_feedback: f64, creator_utility: f64) -> f64 {
    alpha * consumer_utility + (1.0 - alpha) * p_feedback * creator_utility
}

/// `e^{-E(a)}`.
pub fn heuristic_utility(expected_feedback: f64) -> f64 {
    (-expected_feedback).exp()
}

/// First-level sensitivity, floored at zero.
pub fn pcreate_utility_delta(curve: &SensitivityCurve) -> f64 {
    curve.deltas.first().copied().unwrap_or(0.0).max(0.0)
}

/// `e^{tau * E(a) + b}`, with the exponent capped to keep the value finite.
pub fn pcreate_utility_param(curve: &SensitivityCurve, expected_feedback: f64) -> f64 {
    (curve.tau * expected_feedback + curve.b).min(700.0).exp()
}

/// Sorts by descending score, then ascending age, then ascending item id.
pub fn order_scored<T>(items: &mut [T], key: impl Fn(&T) -> (f64, u32, u32)) {
    items.sort_by(|a, b| {
        let (sa, aa, ia) = key(a);
        let (sb, ab, ib) = key(b);
        sb.total_cmp(&sa).then(aa.cmp(&ab)).then(ia.cmp(&ib))
    });
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedItem {
    pub item_id: u32,
    pub creator_id: u32,
    pub age_ticks: u32,
    pub quality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredItem {
    pub item: FeedItem,
    pub consumer_utility: f64,
    pub p_feedback: f64,
    pub creator_utility: f64,
    pub expected_feedback: f64,
    pub final_score: f64,
}

impl ScoredItem {
    pub fn score(
        item: FeedItem,
        consumer_utility: f64,
        p_feedback: f64,
        expected_feedback: f64,
        policy: &RankingPolicy,
    ) -> Self {
        let creator_utility = policy.creator_utility(item.creator_id, expected_feedback);
        Self {
            item,
            consumer_utility,
            p_feedback,
            creator_utility,
            expected_feedback,
            final_score: policy.feed_score(consumer_utility, p_feedback, creator_utility),
        }
    }
}

/// Scores every candidate under `policy` and returns them in feed order.
/// `estimates(item)` yields `(consumer_utility, p_feedback, expected_feedback)`.
pub fn rank_feed(
    candidates: &[FeedItem],
    policy: &RankingPolicy,
    estimates: impl Fn(&FeedItem) -> (f64, f64, f64),
) -> Vec<ScoredItem> {
    let mut out: Vec<ScoredItem> = candidates
        .iter()
        .map(|it| {
            let (cu, pf, ea) = estimates(it);
            ScoredItem::score(*it, cu, pf, ea, policy)
        })
        .collect();
    order_scored(&mut out, |s| (s.final_score, s.item.age_ticks, s.item.item_id));
    out
}

/// Feedback received by `creator` in `[at_tick - window, at_tick)`, scaled
/// to `horizon` ticks.
pub fn estimate_expected_feedback(
    log: &EventLog,
    creator: u32,
    window: u32,
    horizon: u32,
    at_tick: u32,
) -> Result<f64> {
    if window == 0 {
        return Err(Error::config("expected-feedback window must be >= 1"));
    }
    let lo = at_tick.saturating_sub(window);
    let first = log.events.partition_point(|e| e.tick < lo);
    let count = log.events[first..]
        .iter()
        .take_while(|e| e.tick < at_tick)
        .filter(|e| e.kind == EventKind::Feedback && e.target == creator)
        .count();
    Ok(count as f64 * f64::from(horizon) / f64::from(window))
}

/// Position of `a` relative to `b` in feed order.
pub fn feed_order(a: (f64, u32, u32), b: (f64, u32, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}
