use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::ecosystem::{EventKind, EventLog};
use crate::error::{Error, Result};

/// Measurement window `[start, end)`; the previous window is the same
/// length immediately before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MetricWindow {
    pub start: u32,
    pub end: u32,
    /// Ticks after a creation within which feedback counts as a response.
    pub response_horizon: u32,
}

impl MetricWindow {
    /// The last full window of a `ticks`-long run that leaves room for the
    /// response horizon.
    pub fn trailing(ticks: u32, len: u32, response_horizon: u32) -> Result<Self> {
        let end = ticks
            .checked_sub(response_horizon)
            .ok_or_else(|| Error::config("run shorter than the response horizon"))?;
        let start = end.checked_sub(len).filter(|&s| s >= len && len > 0).ok_or_else(|| {
            Error::config(format!(
                "{ticks} ticks cannot hold two {len}-tick windows plus a {response_horizon}-tick horizon"
            ))
        })?;
        Ok(Self { start, end, response_horizon })
    }

    pub fn len(&self) -> u32 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    fn prev_start(&self) -> u32 {
        self.start.saturating_sub(self.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MetricSample {
    pub unit_id: u32,
    /// Creations plus feedback given.
    pub contributions: f64,
    pub contributor: bool,
    /// Created an item that drew feedback within the response horizon.
    pub contributor_with_response: bool,
    /// Created in this window and the previous one.
    pub retained_creator: bool,
    /// Feedback given.
    pub feed_viral_actions: f64,
    pub feed_viral_actor: bool,
    /// Clicks plus feedback given.
    pub feed_interactions: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Metric {
    Contributions,
    Contributors,
    ContributorsWithResponse,
    RetainedCreators,
    FeedViralActions,
    FeedViralActors,
    FeedInteractions,
}

impl Metric {
    pub const CREATOR: [Metric; 4] =
        [Metric::Contributions, Metric::Contributors, Metric::ContributorsWithResponse, Metric::RetainedCreators];
    pub const CONSUMER: [Metric; 3] = [Metric::FeedViralActions, Metric::FeedViralActors, Metric::FeedInteractions];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Contributions => "Contributions",
            Metric::Contributors => "Contributors",
            Metric::ContributorsWithResponse => "Contributors with Response",
            Metric::RetainedCreators => "Retained Creators",
            Metric::FeedViralActions => "Feed Viral Actions",
            Metric::FeedViralActors => "Feed Viral Actors",
            Metric::FeedInteractions => "Feed Interactions",
        }
    }

    pub fn is_flag(self) -> bool {
        matches!(
            self,
            Metric::Contributors
                | Metric::ContributorsWithResponse
                | Metric::RetainedCreators
                | Metric::FeedViralActors
        )
    }

    pub fn value(self, s: &MetricSample) -> f64 {
        let flag = |b: bool| f64::from(u8::from(b));
        match self {
            Metric::Contributions => s.contributions,
            Metric::Contributors => flag(s.contributor),
            Metric::ContributorsWithResponse => flag(s.contributor_with_response),
            Metric::RetainedCreators => flag(s.retained_creator),
            Metric::FeedViralActions => s.feed_viral_actions,
            Metric::FeedViralActors => flag(s.feed_viral_actor),
            Metric::FeedInteractions => s.feed_interactions,
        }
    }

    pub fn values(self, samples: &[MetricSample]) -> Vec<f64> {
        samples.iter().map(|s| self.value(s)).collect()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-unit metrics over `window`, in the order of `units`.
pub fn compute_metrics(log: &EventLog, units: &[u32], window: &MetricWindow) -> Result<Vec<MetricSample>> {
    if window.is_empty() || window.end > log.n_ticks {
        return Err(Error::Windowing(format!(
            "metric window [{}, {}) outside a {}-tick log",
            window.start, window.end, log.n_ticks
        )));
    }
    let index: HashMap<u32, usize> = units.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let mut out: Vec<MetricSample> = units.iter().map(|&u| MetricSample { unit_id: u, ..Default::default() }).collect();
    let mut created_prev = vec![false; units.len()];
    let mut created_now = vec![false; units.len()];
    // item -> (unit index, creation tick) for creations inside the window
    let mut items: HashMap<u32, (usize, u32)> = HashMap::new();
    let horizon_end = window.end + window.response_horizon;

    let first = log.events.partition_point(|e| e.tick < window.prev_start());
    for e in log.events[first..].iter().take_while(|e| e.tick <= horizon_end) {
        let in_window = e.tick >= window.start && e.tick < window.end;
        match e.kind {
            EventKind::Create => {
                if let Some(&i) = index.get(&e.actor) {
                    if e.tick < window.start {
                        created_prev[i] = true;
                    } else if in_window {
                        created_now[i] = true;
                        out[i].contributions += 1.0;
                        if let Some(item) = e.item {
                            items.insert(item, (i, e.tick));
                        }
                    }
                }
            }
            EventKind::Feedback => {
                if in_window {
                    if let Some(&i) = index.get(&e.actor) {
                        out[i].contributions += 1.0;
                        out[i].feed_viral_actions += 1.0;
                        out[i].feed_interactions += 1.0;
                    }
                }
                if let Some((i, t0)) = e.item.and_then(|it| items.get(&it)).copied() {
                    if e.tick <= t0 + window.response_horizon {
                        out[i].contributor_with_response = true;
                    }
                }
            }
            EventKind::Click => {
                if in_window {
                    if let Some(&i) = index.get(&e.actor) {
                        out[i].feed_interactions += 1.0;
                    }
                }
            }
            EventKind::Session | EventKind::Impression => {}
        }
    }
    for (i, s) in out.iter_mut().enumerate() {
        s.contributor = s.contributions > 0.0;
        s.feed_viral_actor = s.feed_viral_actions > 0.0;
        s.retained_creator = created_prev[i] && created_now[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecosystem::Event;
    use rand::Rng as _;

    fn ev(tick: u32, kind: EventKind, actor: u32, target: u32, item: Option<u32>) -> Event {
        Event { tick, kind, actor, target, item }
    }

    #[test]
    fn empty_log_is_all_zero() {
        let log = EventLog::new(0, 30);
        let w = MetricWindow::trailing(30, 10, 2).unwrap();
        let s = compute_metrics(&log, &[0, 1], &w).unwrap();
        assert!(s.iter().all(|x| *x == MetricSample { unit_id: x.unit_id, ..Default::default() }));
    }

    #[test]
    fn retention_needs_both_windows() {
        let mut log = EventLog::new(0, 30);
        let w = MetricWindow { start: 10, end: 20, response_horizon: 2 };
        log.events = vec![
            ev(5, EventKind::Create, 0, 0, Some(0)),
            ev(6, EventKind::Create, 1, 1, Some(1)),
            ev(12, EventKind::Create, 0, 0, Some(2)),
            ev(13, EventKind::Feedback, 3, 0, Some(2)),
            ev(15, EventKind::Create, 2, 2, Some(3)),
            ev(19, EventKind::Feedback, 3, 2, Some(3)),
        ];
        let s = compute_metrics(&log, &[0, 1, 2, 3], &w).unwrap();
        assert!(s[0].retained_creator && !s[1].retained_creator && !s[2].retained_creator);
        assert!(s[0].contributor_with_response);
        assert!(!s[2].contributor_with_response);
        assert_eq!(s[3].contributions, 2.0);
        assert!(s[3].feed_viral_actor);
    }

    fn brute(log: &EventLog, u: u32, w: &MetricWindow) -> MetricSample {
        let inw = |t: u32| t >= w.start && t < w.end;
        let count =
            |k: EventKind| log.events.iter().filter(|e| e.kind == k && e.actor == u && inw(e.tick)).count() as f64;
        let creates = count(EventKind::Create);
        let fb = count(EventKind::Feedback);
        let clicks = count(EventKind::Click);
        let prev = log
            .events
            .iter()
            .any(|e| e.kind == EventKind::Create && e.actor == u && e.tick >= w.start - w.len() && e.tick < w.start);
        let response = log.events.iter().any(|c| {
            c.kind == EventKind::Create
                && c.actor == u
                && inw(c.tick)
                && log.events.iter().any(|f| {
                    f.kind == EventKind::Feedback
                        && f.item == c.item
                        && f.tick >= c.tick
                        && f.tick <= c.tick + w.response_horizon
                })
        });
        MetricSample {
            unit_id: u,
            contributions: creates + fb,
            contributor: creates + fb > 0.0,
            contributor_with_response: response,
            retained_creator: prev && creates > 0.0,
            feed_viral_actions: fb,
            feed_viral_actor: fb > 0.0,
            feed_interactions: fb + clicks,
        }
    }

    #[test]
    fn matches_brute_force_recount() {
        let mut rng = crate::rng::rng_from(9);
        for seed in 0..5 {
            let n = 12u32;
            let mut log = EventLog::new(seed, 40);
            let mut items = Vec::new();
            for t in 0..40 {
                for _ in 0..rng.random_range(0..12) {
                    let actor = rng.random_range(0..n);
                    match rng.random_range(0..4) {
                        0 => {
                            let id = items.len() as u32;
                            items.push(actor);
                            log.events.push(ev(t, EventKind::Create, actor, actor, Some(id)));
                        }
                        1 if !items.is_empty() => {
                            let it = rng.random_range(0..items.len());
                            log.events.push(ev(t, EventKind::Feedback, actor, items[it], Some(it as u32)));
                        }
                        2 => log.events.push(ev(t, EventKind::Click, actor, 0, None)),
                        _ => log.events.push(ev(t, EventKind::Session, actor, actor, None)),
                    }
                }
            }
            let w = MetricWindow::trailing(40, 12, 2).unwrap();
            let units: Vec<u32> = (0..n).collect();
            let s = compute_metrics(&log, &units, &w).unwrap();
            for &u in &units {
                assert_eq!(s[u as usize], brute(&log, u, &w));
            }
        }
    }
}
