use std::collections::{BTreeMap, VecDeque};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::events::{Event, EventKind, EventLog};
use super::graph::{generate_graph, SocialGraph};
use super::population::{assign_population, ActivityLevel, Member, PopulationConfig};
use crate::error::{Error, Result};
use crate::models::{fit_logistic, LinearLogit, LogisticOptions, Matrix};
use crate::ranking::{order_scored, RankingPolicy};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::sigmoid;

/// Simulator knobs. Visit probabilities are per tick; one tick is one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub visit_prob: BTreeMap<ActivityLevel, f64>,
    /// Maximum number of items considered per session.
    pub slate_size: usize,
    /// Probability of examining rank `r` (0-based) is `position_decay^r`.
    pub position_decay: f64,
    /// Items stay eligible for this many ticks after creation.
    pub item_ttl: u32,
    /// Trailing window of received feedback that drives creation.
    pub feedback_memory: u32,
    /// Trailing window used for the online expected-feedback estimate.
    pub expected_feedback_window: u32,
    /// Horizon the expected-feedback estimate is scaled to.
    pub utility_horizon: u32,
    pub click_bias: f64,
    pub feedback_bias: f64,
    pub affinity_sd: f64,
    /// Spread of a per-creator term shared by all edges into that creator.
    pub creator_affinity_sd: f64,
    pub quality_sd: f64,
    /// Length of the exploration run used to fit engagement models.
    pub exploration_ticks: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        use ActivityLevel::*;
        Self {
            visit_prob: [(Daily, 0.9), (Weekly, 0.25), (Monthly, 0.05), (Inactive, 0.0)].into(),
            slate_size: 5,
            position_decay: 0.6,
            item_ttl: 3,
            feedback_memory: 28,
            expected_feedback_window: 14,
            utility_horizon: 7,
            click_bias: -1.5,
            feedback_bias: -1.5,
            affinity_sd: 1.0,
            creator_affinity_sd: 1.0,
            quality_sd: 0.5,
            exploration_ticks: 14,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        for level in ActivityLevel::ALL {
            let p = self.visit_prob.get(&level).copied().unwrap_or(0.0);
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("visit_prob.{level} must be in [0, 1]")));
            }
        }
        if self.slate_size == 0 {
            return Err(Error::config("slate_size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.position_decay) {
            return Err(Error::config("position_decay must be in [0, 1]"));
        }
        if self.item_ttl == 0 || self.feedback_memory == 0 || self.expected_feedback_window == 0 {
            return Err(Error::config("item_ttl, feedback_memory and expected_feedback_window must be >= 1"));
        }
        if !(self.affinity_sd >= 0.0 && self.creator_affinity_sd >= 0.0 && self.quality_sd >= 0.0) {
            return Err(Error::config("affinity_sd, creator_affinity_sd and quality_sd must be >= 0"));
        }
        Ok(())
    }

    fn visit_table(&self) -> [f64; 4] {
        ActivityLevel::ALL.map(|l| self.visit_prob.get(&l).copied().unwrap_or(0.0))
    }

    /// Online expected feedback over the utility horizon from a trailing
    /// window count.
    pub fn expected_feedback(&self, window_count: u32) -> f64 {
        f64::from(window_count) * f64::from(self.utility_horizon) / f64::from(self.expected_feedback_window)
    }
}

/// Graph, population and per-edge consumer affinity: everything that stays
/// fixed across runs on the same world.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecosystem {
    pub graph: SocialGraph,
    pub members: Vec<Member>,
    /// Affinity of each edge, indexed like [`SocialGraph::edges`].
    pub affinity: Vec<f64>,
}

impl Ecosystem {
    pub fn generate(
        n_users: usize,
        mean_degree: f64,
        rewire_prob: f64,
        population: &PopulationConfig,
        sim: &SimConfig,
        seed: u64,
    ) -> Result<Self> {
        sim.validate()?;
        let graph = generate_graph(n_users, mean_degree, rewire_prob, derive_seed(seed, "graph"))?;
        let members = assign_population(&graph, population, derive_seed(seed, "population"))?;
        let mut rng = rng_from(derive_seed(seed, "creator_affinity"));
        let appeal: Vec<f64> =
            (0..n_users).map(|_| sim.creator_affinity_sd * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut rng = rng_from(derive_seed(seed, "affinity"));
        let affinity = graph
            .edges()
            .map(|(_, creator)| appeal[creator as usize] + sim.affinity_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self { graph, members, affinity })
    }

    pub fn from_parts(graph: SocialGraph, members: Vec<Member>, affinity: Vec<f64>) -> Result<Self> {
        if members.len() != graph.n_users() {
            return Err(Error::contract(format!("{} members for a graph of {} users", members.len(), graph.n_users())));
        }
        if affinity.len() != graph.n_edges() {
            return Err(Error::contract("affinity length differs from edge count"));
        }
        for (i, m) in members.iter().enumerate() {
            if m.profile.user_id as usize != i {
                return Err(Error::contract(format!("member {i} has user_id {}", m.profile.user_id)));
            }
        }
        Ok(Self { graph, members, affinity })
    }

    pub fn n_users(&self) -> usize {
        self.graph.n_users()
    }

    pub fn profiles(&self) -> Vec<super::UserProfile> {
        self.members.iter().map(|m| m.profile.clone()).collect()
    }
}

/// Learned consumer-utility (click) and feedback-probability estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementModels {
    pub click: LinearLogit,
    pub feedback: LinearLogit,
}

impl EngagementModels {
    /// Predicts 0.5 for everything; used only for the exploration run.
    pub fn uninformed() -> Self {
        Self { click: LinearLogit::zeros(ENGAGEMENT_FEATURES), feedback: LinearLogit::zeros(ENGAGEMENT_FEATURES) }
    }
}

pub const ENGAGEMENT_FEATURES: usize = 4;

/// `[quality, age, smoothed edge feedback rate, smoothed edge click rate]`
#[inline]
pub fn engagement_features(quality: f64, age: u32, edge: [u32; 3]) -> [f64; ENGAGEMENT_FEATURES] {
    let [imps, clicks, feedback] = edge.map(f64::from);
    [quality, f64::from(age), (feedback + 0.5) / (imps + 5.0), (clicks + 1.0) / (imps + 5.0)]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpressionRecord {
    pub features: [f64; ENGAGEMENT_FEATURES],
    pub clicked: bool,
    pub feedback: bool,
}

/// One experiment arm: the ranking policy applied to its consumers' feeds
/// and an injected multiplier on their feedback propensity (1 = none).
#[derive(Debug, Clone)]
pub struct Arm {
    pub policy: RankingPolicy,
    pub feedback_multiplier: f64,
}

impl Arm {
    pub fn new(policy: RankingPolicy) -> Self {
        Self { policy, feedback_multiplier: 1.0 }
    }
}

/// Which arm ranks each consumer's feed.
#[derive(Debug, Clone)]
pub struct SimPlan {
    pub arms: Vec<Arm>,
    pub consumer_arm: Vec<u8>,
}

impl SimPlan {
    pub fn uniform(policy: RankingPolicy, n_users: usize) -> Self {
        Self::uniform_arm(Arm::new(policy), n_users)
    }

    pub fn uniform_arm(arm: Arm, n_users: usize) -> Self {
        Self { arms: vec![arm], consumer_arm: vec![0; n_users] }
    }

    pub fn validate(&self, n_users: usize) -> Result<()> {
        if self.consumer_arm.len() != n_users {
            return Err(Error::config("plan must assign an arm to every consumer"));
        }
        if let Some(&a) = self.consumer_arm.iter().find(|&&a| a as usize >= self.arms.len()) {
            return Err(Error::config(format!("unknown arm {a}")));
        }
        for arm in &self.arms {
            arm.policy.validate(n_users)?;
            if !(arm.feedback_multiplier.is_finite() && arm.feedback_multiplier >= 0.0) {
                return Err(Error::config("feedback_multiplier must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct ItemState {
    tick: u32,
    quality: f64,
}

#[derive(Clone, Copy)]
struct Candidate {
    item: u32,
    creator: u32,
    edge: usize,
    age: u32,
    quality: f64,
    score: f64,
}

const NEVER: u32 = u32::MAX;

/// A configured run over one world.
pub struct Simulation<'a> {
    pub eco: &'a Ecosystem,
    pub engagement: &'a EngagementModels,
    pub plan: &'a SimPlan,
    pub config: &'a SimConfig,
}

impl Simulation<'_> {
    pub fn run(&self, ticks: u32, seed: u64) -> Result<EventLog> {
        self.run_inner(ticks, seed, None)
    }

    /// Also records engagement features and outcomes of every impression.
    pub fn run_recording(&self, ticks: u32, seed: u64, records: &mut Vec<ImpressionRecord>) -> Result<EventLog> {
        self.run_inner(ticks, seed, Some(records))
    }

    fn run_inner(&self, ticks: u32, seed: u64, mut records: Option<&mut Vec<ImpressionRecord>>) -> Result<EventLog> {
        let cfg = self.config;
        cfg.validate()?;
        let n = self.eco.n_users();
        self.plan.validate(n)?;

        let graph = &self.eco.graph;
        let edge_targets: Vec<u32> = graph.edges().map(|(_, v)| v).collect();
        let visit = cfg.visit_table();
        let activity: Vec<usize> = self.eco.members.iter().map(|m| m.profile.activity_level.index()).collect();

        let mem = cfg.feedback_memory as usize;
        let win = cfg.expected_feedback_window as usize;
        let ring_len = mem.max(win);
        let mut ring = vec![0u32; ring_len * n];
        let mut current = vec![0u32; n];
        let mut mem_sum = vec![0u32; n];
        let mut win_sum = vec![0u32; n];

        let mut items: Vec<ItemState> = Vec::new();
        let mut recent: Vec<VecDeque<u32>> = vec![VecDeque::new(); n];
        let mut last_visit = vec![NEVER; n];
        let mut edge_stats = vec![[0u32; 3]; graph.n_edges()];
        let examine: Vec<f64> = (0..cfg.slate_size).map(|r| cfg.position_decay.powi(r as i32)).collect();

        let mut rng: Rng = rng_from(seed);
        let mut log = EventLog::new(seed, ticks);
        let mut cands: Vec<Candidate> = Vec::new();

        for t in 0..ticks {
            for u in 0..n {
                if visit[activity[u]] == 0.0 || rng.random::<f64>() >= visit[activity[u]] {
                    continue;
                }
                let uid = u as u32;
                log.events.push(Event { tick: t, kind: EventKind::Session, actor: uid, target: uid, item: None });

                let mut lower = t.saturating_sub(cfg.item_ttl);
                if last_visit[u] != NEVER {
                    lower = lower.max(last_visit[u]);
                }
                last_visit[u] = t;

                cands.clear();
                for e in graph.edge_range(uid) {
                    let creator = edge_targets[e];
                    for &it in &recent[creator as usize] {
                        let item = items[it as usize];
                        if item.tick >= lower {
                            cands.push(Candidate {
                                item: it,
                                creator,
                                edge: e,
                                age: t - item.tick,
                                quality: item.quality,
                                score: 0.0,
                            });
                        }
                    }
                }
                if cands.is_empty() {
                    continue;
                }

                let arm = &self.plan.arms[self.plan.consumer_arm[u] as usize];
                let policy = &arm.policy;
                for c in cands.iter_mut() {
                    let x = engagement_features(c.quality, c.age, edge_stats[c.edge]);
                    let cu = self.engagement.click.predict(&x);
                    c.score = if policy.is_consumer_only() {
                        cu
                    } else {
                        let pf = self.engagement.feedback.predict(&x);
                        let ea = cfg.expected_feedback(win_sum[c.creator as usize]);
                        policy.feed_score(cu, pf, policy.creator_utility(c.creator, ea))
                    };
                }
                order_scored(&mut cands, |c| (c.score, c.age, c.item));

                for (rank, c) in cands.iter().take(cfg.slate_size).enumerate() {
                    if rng.random::<f64>() >= examine[rank] {
                        continue;
                    }
                    let x = engagement_features(c.quality, c.age, edge_stats[c.edge]);
                    let lin = self.eco.affinity[c.edge] + c.quality;
                    let clicked = rng.random::<f64>() < sigmoid(cfg.click_bias + lin);
                    let fb_prob = (arm.feedback_multiplier * sigmoid(cfg.feedback_bias + lin)).min(1.0);
                    let fed = rng.random::<f64>() < fb_prob;

                    let item = Some(c.item);
                    log.events.push(Event {
                        tick: t,
                        kind: EventKind::Impression,
                        actor: uid,
                        target: c.creator,
                        item,
                    });
                    let stats = &mut edge_stats[c.edge];
                    stats[0] += 1;
                    if clicked {
                        stats[1] += 1;
                        log.events.push(Event { tick: t, kind: EventKind::Click, actor: uid, target: c.creator, item });
                    }
                    if fed {
                        stats[2] += 1;
                        current[c.creator as usize] += 1;
                        log.events.push(Event {
                            tick: t,
                            kind: EventKind::Feedback,
                            actor: uid,
                            target: c.creator,
                            item,
                        });
                    }
                    if let Some(rec) = records.as_deref_mut() {
                        rec.push(ImpressionRecord { features: x, clicked, feedback: fed });
                    }
                }
            }

            for (u, member) in self.eco.members.iter().enumerate() {
                let p = member.behavior.create_prob(f64::from(mem_sum[u]));
                if rng.random::<f64>() < p {
                    let id = items.len() as u32;
                    let quality = cfg.quality_sd * rng.sample::<f64, _>(StandardNormal);
                    items.push(ItemState { tick: t, quality });
                    recent[u].push_back(id);
                    let uid = u as u32;
                    log.events.push(Event {
                        tick: t,
                        kind: EventKind::Create,
                        actor: uid,
                        target: uid,
                        item: Some(id),
                    });
                }
            }

            // Roll the feedback windows forward to [t + 1 - len, t + 1).
            let slot = t as usize % ring_len;
            for u in 0..n {
                if t as usize >= mem {
                    mem_sum[u] -= ring[((t as usize - mem) % ring_len) * n + u];
                }
                if t as usize >= win {
                    win_sum[u] -= ring[((t as usize - win) % ring_len) * n + u];
                }
                mem_sum[u] += current[u];
                win_sum[u] += current[u];
                ring[slot * n + u] = current[u];
                current[u] = 0;
            }
            let keep_from = (t + 1).saturating_sub(cfg.item_ttl);
            for q in recent.iter_mut() {
                while q.front().is_some_and(|&it| items[it as usize].tick < keep_from) {
                    q.pop_front();
                }
            }
        }
        Ok(log)
    }
}

/// Runs `ticks` ticks of the feed/creation loop under `plan`.
pub fn simulate(
    eco: &Ecosystem,
    engagement: &EngagementModels,
    plan: &SimPlan,
    config: &SimConfig,
    ticks: u32,
    seed: u64,
) -> Result<EventLog> {
    Simulation { eco, engagement, plan, config }.run(ticks, seed)
}

/// Fits click and feedback estimators on impressions from an exploration
/// run with an uninformed consumer-only ranker.
pub fn fit_engagement_models(eco: &Ecosystem, config: &SimConfig, seed: u64) -> Result<EngagementModels> {
    let plan = SimPlan::uniform(RankingPolicy::consumer_only(), eco.n_users());
    let uninformed = EngagementModels::uninformed();
    let mut records = Vec::new();
    Simulation { eco, engagement: &uninformed, plan: &plan, config }.run_recording(
        config.exploration_ticks,
        derive_seed(seed, "exploration"),
        &mut records,
    )?;
    let mut x = Matrix::zeros(0, ENGAGEMENT_FEATURES);
    for r in &records {
        x.push_row(&r.features);
    }
    let opts = LogisticOptions { l2: 1.0, ..LogisticOptions::default() };
    let clicks: Vec<bool> = records.iter().map(|r| r.clicked).collect();
    let feedback: Vec<bool> = records.iter().map(|r| r.feedback).collect();
    let click = fit_logistic(&x, &clicks, &opts)?.model;
    let feedback = fit_logistic(&x, &feedback, &opts)?.model;
    Ok(EngagementModels { click, feedback })
}
