use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{BucketEdges, TimelineConfig};
use crate::ecosystem::{ActivityLevel, ContributionLevel, EventKind, EventLog, UserProfile, COHORT_SLOTS};
use crate::error::{Error, Result};
use crate::io::{split_header, write_header};

pub const EXAMPLES_SCHEMA: &str = "feedshape-examples/1";

/// `ln(1 + count)` of sessions, impressions, clicks, feedback given and
/// creations in the feature window.
pub const ACTIVITY_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    /// No cross terms (tree models, or the interaction-free logistic baseline).
    #[default]
    None,
    /// Feedback level (2..K) crossed with the activity and contribution one-hots.
    CohortCross,
}

impl InteractionMode {
    pub fn width(self, edges: &BucketEdges) -> usize {
        match self {
            InteractionMode::None => 0,
            InteractionMode::CohortCross => (edges.k() - 1) * COHORT_SLOTS,
        }
    }
}

/// Raw per-user counts over a feature window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActivityCounts {
    pub feedback_received: u32,
    pub sessions: u32,
    pub impressions: u32,
    pub clicks: u32,
    pub feedback_given: u32,
    pub creates: u32,
}

impl ActivityCounts {
    pub fn active(&self) -> bool {
        self.sessions + self.impressions + self.clicks + self.feedback_given + self.creates > 0
    }

    pub fn features(&self) -> Vec<f64> {
        [self.sessions, self.impressions, self.clicks, self.feedback_given, self.creates]
            .iter()
            .map(|&c| f64::from(c).ln_1p())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Feedback received in the feature window.
    pub a: u32,
    /// 1-based feedback level of `a`.
    pub a_bucket: usize,
    pub static_features: Vec<f64>,
    pub activity: Vec<f64>,
    pub interactions: Vec<f64>,
}

impl FeatureVector {
    pub fn new(
        a: u32,
        edges: &BucketEdges,
        static_features: Vec<f64>,
        activity: Vec<f64>,
        mode: InteractionMode,
    ) -> Result<Self> {
        if mode == InteractionMode::CohortCross && static_features.len() < COHORT_SLOTS {
            return Err(Error::contract("static features lack the cohort one-hot slots"));
        }
        let mut fv = Self { a, a_bucket: 0, static_features, activity, interactions: Vec::new() };
        fv.set_feedback(a, edges, mode);
        Ok(fv)
    }

    pub fn mode(&self) -> InteractionMode {
        if self.interactions.is_empty() {
            InteractionMode::None
        } else {
            InteractionMode::CohortCross
        }
    }

    /// Same user with `a` replaced; level and cross terms are re-derived.
    pub fn with_feedback(&self, a: u32, edges: &BucketEdges) -> Self {
        let mut fv = self.clone();
        fv.set_feedback(a, edges, self.mode());
        fv
    }

    fn set_feedback(&mut self, a: u32, edges: &BucketEdges, mode: InteractionMode) {
        self.a = a;
        self.a_bucket = edges.bucketize(a);
        self.interactions.clear();
        if mode == InteractionMode::CohortCross {
            self.interactions.resize(mode.width(edges), 0.0);
            if self.a_bucket >= 2 {
                let start = (self.a_bucket - 2) * COHORT_SLOTS;
                self.interactions[start..start + COHORT_SLOTS].copy_from_slice(&self.static_features[..COHORT_SLOTS]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub user_id: u32,
    pub features: FeatureVector,
    pub label: bool,
    pub activity_level: ActivityLevel,
    pub contribution_level: ContributionLevel,
}

/// Per-user counts for events with `lo <= tick < hi`.
fn window_counts(log: &EventLog, n_users: usize, lo: u32, hi: u32) -> Result<Vec<ActivityCounts>> {
    let mut counts = vec![ActivityCounts::default(); n_users];
    let first = log.events.partition_point(|e| e.tick < lo);
    for e in log.events[first..].iter().take_while(|e| e.tick < hi) {
        let actor = e.actor as usize;
        if actor >= n_users || (e.kind == EventKind::Feedback && e.target as usize >= n_users) {
            return Err(Error::contract(format!("event references user outside population of {n_users}")));
        }
        let c = &mut counts[actor];
        match e.kind {
            EventKind::Session => c.sessions += 1,
            EventKind::Impression => c.impressions += 1,
            EventKind::Click => c.clicks += 1,
            EventKind::Create => c.creates += 1,
            EventKind::Feedback => {
                c.feedback_given += 1;
                counts[e.target as usize].feedback_received += 1;
            }
        }
    }
    Ok(counts)
}

fn check_profiles(profiles: &[UserProfile]) -> Result<()> {
    for (i, p) in profiles.iter().enumerate() {
        if p.user_id as usize != i {
            return Err(Error::contract(format!("profile {i} has user_id {}", p.user_id)));
        }
    }
    Ok(())
}

/// Features for every user observed at `t` from the window `[t - u, t)`,
/// whether or not the user was active.
pub fn features_at(
    log: &EventLog,
    profiles: &[UserProfile],
    t: u32,
    u: u32,
    edges: &BucketEdges,
    mode: InteractionMode,
) -> Result<Vec<FeatureVector>> {
    check_profiles(profiles)?;
    if u == 0 || t < u {
        return Err(Error::Windowing(format!("feature window [{t} - {u}, {t}) is invalid")));
    }
    if log.n_ticks < t {
        return Err(Error::Windowing(format!("log spans {} ticks, features need {t}", log.n_ticks)));
    }
    let counts = window_counts(log, profiles.len(), t - u, t)?;
    profiles
        .iter()
        .zip(&counts)
        .map(|(p, c)| FeatureVector::new(c.feedback_received, edges, p.static_features.clone(), c.features(), mode))
        .collect()
}

/// One example per user with any activity in `[t - u, t)`, labelled by
/// whether they create in `[t, t + w]`. Sorted by user id.
pub fn collect_examples(
    log: &EventLog,
    profiles: &[UserProfile],
    cfg: &TimelineConfig,
    edges: &BucketEdges,
    mode: InteractionMode,
) -> Result<Vec<TrainingExample>> {
    cfg.validate()?;
    check_profiles(profiles)?;
    if log.n_ticks < cfg.required_ticks() {
        return Err(Error::Windowing(format!(
            "log spans {} ticks, timeline needs {}",
            log.n_ticks,
            cfg.required_ticks()
        )));
    }
    let counts = window_counts(log, profiles.len(), cfg.t - cfg.u, cfg.t)?;
    let response = window_counts(log, profiles.len(), cfg.t, cfg.t + cfg.w + 1)?;
    let mut out = Vec::new();
    for (p, (c, r)) in profiles.iter().zip(counts.iter().zip(&response)) {
        if !c.active() {
            continue;
        }
        out.push(TrainingExample {
            user_id: p.user_id,
            features: FeatureVector::new(c.feedback_received, edges, p.static_features.clone(), c.features(), mode)?,
            label: r.creates > 0,
            activity_level: p.activity_level,
            contribution_level: p.contribution_level,
        });
    }
    Ok(out)
}

pub fn write_examples_csv<W: Write>(mut w: W, examples: &[TrainingExample], edges: &BucketEdges) -> Result<()> {
    let first = examples.first();
    let n_static = first.map_or(0, |e| e.features.static_features.len());
    let n_activity = first.map_or(ACTIVITY_FEATURES, |e| e.features.activity.len());
    let n_inter = first.map_or(0, |e| e.features.interactions.len());
    let edge_str = edges.edges().iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    write_header(
        &mut w,
        EXAMPLES_SCHEMA,
        &[
            ("edges", edge_str),
            ("n_static", n_static.to_string()),
            ("n_activity", n_activity.to_string()),
            ("n_interactions", n_inter.to_string()),
        ],
    )?;
    let mut cw = csv::Writer::from_writer(w);
    let mut header: Vec<String> =
        ["user_id", "activity_level", "contribution_level", "label", "a", "a_bucket"].map(String::from).to_vec();
    header.extend((0..n_static).map(|i| format!("s_{i}")));
    header.extend((0..n_activity).map(|i| format!("act_{i}")));
    header.extend((0..n_inter).map(|i| format!("x_{i}")));
    cw.write_record(&header)?;
    for ex in examples {
        let f = &ex.features;
        if f.static_features.len() != n_static || f.activity.len() != n_activity || f.interactions.len() != n_inter {
            return Err(Error::contract("examples have inconsistent feature widths"));
        }
        let mut rec = vec![
            ex.user_id.to_string(),
            ex.activity_level.to_string(),
            ex.contribution_level.to_string(),
            u8::from(ex.label).to_string(),
            f.a.to_string(),
            f.a_bucket.to_string(),
        ];
        rec.extend(f.static_features.iter().chain(&f.activity).chain(&f.interactions).map(|v| v.to_string()));
        cw.write_record(&rec)?;
    }
    cw.flush()?;
    Ok(())
}

pub fn read_examples_csv(text: &str) -> Result<(BucketEdges, Vec<TrainingExample>)> {
    let (params, body) = split_header(text, EXAMPLES_SCHEMA)?;
    let get = |k: &str| -> Result<&String> {
        params.get(k).ok_or_else(|| Error::schema(format!("examples header lacks {k}")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|_| Error::schema(format!("bad {k} in examples header")))
    };
    let edges: Vec<u32> = get("edges")?
        .split(',')
        .map(|s| s.parse().map_err(|_| Error::schema("bad edges in examples header")))
        .collect::<Result<_>>()?;
    let edges = BucketEdges::new(edges).map_err(|e| Error::schema(e.to_string()))?;
    let (ns, na, ni) = (num("n_static")?, num("n_activity")?, num("n_interactions")?);
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 6 + ns + na + ni {
            return Err(Error::schema(format!("examples row has {} columns", rec.len())));
        }
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let parse_u = |i: usize| -> Result<u32> {
            field(i).parse().map_err(|_| Error::schema(format!("bad integer {:?}", field(i))))
        };
        let reals = |lo: usize, n: usize| -> Result<Vec<f64>> {
            (lo..lo + n)
                .map(|i| field(i).parse().map_err(|_| Error::schema(format!("bad real {:?}", field(i)))))
                .collect()
        };
        let a = parse_u(4)?;
        let a_bucket = parse_u(5)? as usize;
        if a_bucket != edges.bucketize(a) {
            return Err(Error::schema(format!("a_bucket {a_bucket} inconsistent with a={a}")));
        }
        let label = match field(3) {
            "0" => false,
            "1" => true,
            other => return Err(Error::schema(format!("bad label {other:?}"))),
        };
        out.push(TrainingExample {
            user_id: parse_u(0)?,
            activity_level: field(1).parse()?,
            contribution_level: field(2).parse()?,
            label,
            features: FeatureVector {
                a,
                a_bucket,
                static_features: reals(6, ns)?,
                activity: reals(6 + ns, na)?,
                interactions: reals(6 + ns + na, ni)?,
            },
        });
    }
    Ok((edges, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecosystem::{Event, EventLog};
    use rand::Rng as _;

    fn profile(id: u32) -> UserProfile {
        UserProfile::new(id, ActivityLevel::Daily, ContributionLevel::DailyContrib, 0, 1, 1, 1)
    }

    fn ev(tick: u32, kind: EventKind, actor: u32, target: u32, item: Option<u32>) -> Event {
        Event { tick, kind, actor, target, item }
    }

    #[test]
    fn idle_user_and_future_creator() {
        let cfg = TimelineConfig::new(10, 5, 3).unwrap();
        let mut log = EventLog::new(0, 14);
        log.events = vec![
            ev(6, EventKind::Session, 0, 0, None),
            ev(7, EventKind::Session, 1, 1, None),
            ev(11, EventKind::Create, 1, 1, Some(0)),
        ];
        let ex =
            collect_examples(&log, &[profile(0), profile(1)], &cfg, &BucketEdges::default(), InteractionMode::None)
                .unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!((ex[0].features.a, ex[0].features.a_bucket, ex[0].label), (0, 1, false));
        assert!(ex[1].label);
    }

    #[test]
    fn short_log_is_windowing_error() {
        let cfg = TimelineConfig::new(10, 5, 3).unwrap();
        let log = EventLog::new(0, 13);
        let r = collect_examples(&log, &[profile(0)], &cfg, &BucketEdges::default(), InteractionMode::None);
        assert!(matches!(r, Err(Error::Windowing(_))));
    }

    #[test]
    fn interactions_follow_the_level() {
        let edges = BucketEdges::default();
        let p = profile(0);
        let fv = FeatureVector::new(7, &edges, p.static_features.clone(), vec![0.0; 5], InteractionMode::CohortCross)
            .unwrap();
        assert_eq!(fv.interactions.len(), 5 * COHORT_SLOTS);
        let start = (4 - 2) * COHORT_SLOTS;
        assert_eq!(&fv.interactions[start..start + COHORT_SLOTS], &p.static_features[..COHORT_SLOTS]);
        assert_eq!(fv.interactions.iter().filter(|&&x| x != 0.0).count(), 2);
        let zero = fv.with_feedback(0, &edges);
        assert!(zero.interactions.iter().all(|&x| x == 0.0));
        assert_eq!(zero.a_bucket, 1);
    }

    fn random_log(seed: u64, n: u32, ticks: u32) -> EventLog {
        let mut rng = crate::rng::rng_from(seed);
        let mut log = EventLog::new(seed, ticks);
        for t in 0..ticks {
            for _ in 0..rng.random_range(0..20) {
                let actor = rng.random_range(0..n);
                let target = rng.random_range(0..n);
                let kind = match rng.random_range(0..5) {
                    0 => EventKind::Session,
                    1 => EventKind::Impression,
                    2 => EventKind::Click,
                    3 => EventKind::Feedback,
                    _ => EventKind::Create,
                };
                let target = if matches!(kind, EventKind::Session | EventKind::Create) { actor } else { target };
                log.events.push(ev(t, kind, actor, target, None));
            }
        }
        log
    }

    #[test]
    fn counts_match_brute_force_and_ignore_the_future() {
        let n = 30;
        let profiles: Vec<_> = (0..n).map(profile).collect();
        let cfg = TimelineConfig::new(20, 10, 4).unwrap();
        let edges = BucketEdges::default();
        for seed in 0..5 {
            let log = random_log(seed, n, 30);
            let ex = collect_examples(&log, &profiles, &cfg, &edges, InteractionMode::CohortCross).unwrap();
            assert!(ex.windows(2).all(|w| w[0].user_id < w[1].user_id));
            for e in &ex {
                let a = log
                    .events
                    .iter()
                    .filter(|x| x.kind == EventKind::Feedback && x.target == e.user_id && (10..20).contains(&x.tick))
                    .count() as u32;
                assert_eq!(e.features.a, a);
                let created = log
                    .events
                    .iter()
                    .any(|x| x.kind == EventKind::Create && x.actor == e.user_id && (20..=24).contains(&x.tick));
                assert_eq!(e.label, created);
            }
            // Features recomputed on a log cut at t are unchanged.
            let cut = log.truncated(20);
            let before = features_at(&cut, &profiles, 20, 10, &edges, InteractionMode::CohortCross).unwrap();
            for e in &ex {
                assert_eq!(e.features, before[e.user_id as usize]);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let n = 20;
        let profiles: Vec<_> = (0..n).map(profile).collect();
        let cfg = TimelineConfig::new(20, 10, 4).unwrap();
        let edges = BucketEdges::default();
        let log = random_log(3, n, 30);
        let ex = collect_examples(&log, &profiles, &cfg, &edges, InteractionMode::CohortCross).unwrap();
        let mut buf = Vec::new();
        write_examples_csv(&mut buf, &ex, &edges).unwrap();
        let (e2, back) = read_examples_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(e2, edges);
        assert_eq!(back, ex);
    }
}
