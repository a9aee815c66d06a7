//! Consumer A/B tests, ego-cluster experiments and effect estimation.

mod metrics;
mod stats;

pub use metrics::{compute_metrics, Metric, MetricSample, MetricWindow};
pub use stats::{delta_effect, ks_uniform, EffectEstimate, TestKind, NEUTRAL_P};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::ecosystem::{simulate, Arm, Ecosystem, EngagementModels, SimConfig, SimPlan, SocialGraph};
use crate::error::{Error, Result};
use crate::io::write_header;
use crate::rng::{derive_indexed, derive_seed, rng_from};

pub const EFFECTS_SCHEMA: &str = "feedshape-effects/1";

/// Everything fixed across replicates of an experiment.
#[derive(Clone, Copy)]
pub struct World<'a> {
    pub eco: &'a Ecosystem,
    pub engagement: &'a EngagementModels,
    pub sim: &'a SimConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub ticks: u32,
    /// Length of the measurement window (and of the previous window).
    pub window: u32,
    pub response_horizon: u32,
    pub n_egos: usize,
    pub min_alters: usize,
    pub max_overlap: f64,
    /// Treatment probability in consumer tests.
    pub split: f64,
    /// Feedback propensity multiplier applied to treated consumers.
    pub effect_multiplier: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            ticks: 56,
            window: 14,
            response_horizon: 2,
            n_egos: 400,
            min_alters: 5,
            max_overlap: 0.2,
            split: 0.5,
            effect_multiplier: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn metric_window(&self) -> Result<MetricWindow> {
        MetricWindow::trailing(self.ticks, self.window, self.response_horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpArm {
    Treatment,
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EgoCluster {
    pub ego: u32,
    /// Followers of the ego, sorted.
    pub alters: Vec<u32>,
    pub arm: Option<ExpArm>,
}

fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Samples egos in random order among users with at least `min_alters`
/// followers, rejecting any whose follower set overlaps an accepted one by
/// more than `max_overlap` (Jaccard).
pub fn select_ego_clusters(
    graph: &SocialGraph,
    n_egos: usize,
    min_alters: usize,
    max_overlap: f64,
    seed: u64,
) -> Result<Vec<EgoCluster>> {
    if n_egos < 2 || min_alters < 1 || !(0.0..=1.0).contains(&max_overlap) {
        return Err(Error::config("need n_egos >= 2, min_alters >= 1 and max_overlap in [0, 1]"));
    }
    select_clusters(graph, n_egos, min_alters, max_overlap, seed)
}

fn select_clusters(
    graph: &SocialGraph,
    n_egos: usize,
    min_alters: usize,
    max_overlap: f64,
    seed: u64,
) -> Result<Vec<EgoCluster>> {
    let mut candidates: Vec<u32> = (0..graph.n_users() as u32).filter(|&u| graph.in_degree(u) >= min_alters).collect();
    candidates.shuffle(&mut rng_from(seed));
    let mut accepted: Vec<EgoCluster> = Vec::with_capacity(n_egos);
    for ego in candidates {
        let mut alters = graph.followers(ego).to_vec();
        alters.sort_unstable();
        if accepted.iter().all(|c| jaccard(&c.alters, &alters) <= max_overlap) {
            accepted.push(EgoCluster { ego, alters, arm: None });
            if accepted.len() == n_egos {
                return Ok(accepted);
            }
        }
    }
    Err(Error::Selection { requested: n_egos, achievable: accepted.len() })
}

/// Shuffles the clusters and treats the first half; with an odd count a
/// coin decides which arm gets the extra cluster.
pub fn assign_treatments(clusters: &[EgoCluster], seed: u64) -> Result<Vec<EgoCluster>> {
    if clusters.len() < 2 {
        return Err(Error::config("need at least two clusters"));
    }
    let mut rng = rng_from(seed);
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.shuffle(&mut rng);
    let n = clusters.len();
    let n_treat = n / 2 + usize::from(n % 2 == 1 && rng.random::<bool>());
    let mut out = clusters.to_vec();
    for (rank, &i) in order.iter().enumerate() {
        out[i].arm = Some(if rank < n_treat { ExpArm::Treatment } else { ExpArm::Control });
    }
    Ok(out)
}

/// Arm 0 is control, arm 1 treatment. Alters of treated clusters get the
/// treatment feed; egos and everyone else get control.
pub fn ego_plan(n_users: usize, clusters: &[EgoCluster], treatment: &Arm, control: &Arm) -> Result<SimPlan> {
    let mut consumer_arm = vec![0u8; n_users];
    for c in clusters {
        match c.arm {
            Some(ExpArm::Treatment) => c.alters.iter().for_each(|&a| consumer_arm[a as usize] = 1),
            Some(ExpArm::Control) => {}
            None => return Err(Error::config(format!("cluster of ego {} has no arm", c.ego))),
        }
    }
    for c in clusters {
        consumer_arm[c.ego as usize] = 0;
    }
    Ok(SimPlan { arms: vec![control.clone(), treatment.clone()], consumer_arm })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSamples {
    pub treat: Vec<MetricSample>,
    pub control: Vec<MetricSample>,
}

impl ArmSamples {
    pub fn effect(&self, metric: Metric) -> Result<EffectEstimate> {
        let test = if metric.is_flag() { TestKind::TwoProportion } else { TestKind::Welch };
        delta_effect(metric.name(), &metric.values(&self.treat), &metric.values(&self.control), test)
    }

    pub fn effects(&self, metrics: &[Metric]) -> Vec<EffectRow> {
        metrics
            .iter()
            .map(|&m| match self.effect(m) {
                Ok(e) => EffectRow::Estimated(e),
                Err(Error::UndefinedRelativeEffect { absolute }) => {
                    EffectRow::Undefined { metric: m.name().to_string(), absolute }
                }
                Err(e) => EffectRow::Undefined { metric: format!("{} ({e})", m.name()), absolute: f64::NAN },
            })
            .collect()
    }
}

/// Runs one ego-cluster experiment and measures the egos only.
pub fn run_ego_experiment(
    world: World<'_>,
    clusters: &[EgoCluster],
    treatment: &Arm,
    control: &Arm,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ArmSamples> {
    let window = cfg.metric_window()?;
    let plan = ego_plan(world.eco.n_users(), clusters, treatment, control)?;
    let log = simulate(world.eco, world.engagement, &plan, world.sim, cfg.ticks, seed)?;
    let pick = |arm: ExpArm| -> Vec<u32> { clusters.iter().filter(|c| c.arm == Some(arm)).map(|c| c.ego).collect() };
    Ok(ArmSamples {
        treat: compute_metrics(&log, &pick(ExpArm::Treatment), &window)?,
        control: compute_metrics(&log, &pick(ExpArm::Control), &window)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsumerAbResult {
    pub in_treatment: Vec<bool>,
    pub samples: ArmSamples,
}

fn bernoulli_assignment(n: usize, split: f64, seed: u64) -> Vec<bool> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| rng.random::<f64>() < split).collect()
}

fn arm_units(in_treatment: &[bool], want: bool) -> Vec<u32> {
    (0..in_treatment.len() as u32).filter(|&u| in_treatment[u as usize] == want).collect()
}

/// User-level randomized test; every consumer sees their own arm's feed.
pub fn run_consumer_ab(
    world: World<'_>,
    treatment: &Arm,
    control: &Arm,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ConsumerAbResult> {
    if !(cfg.split > 0.0 && cfg.split < 1.0) {
        return Err(Error::config("split must be in (0, 1)"));
    }
    let window = cfg.metric_window()?;
    let n = world.eco.n_users();
    let in_treatment = bernoulli_assignment(n, cfg.split, derive_seed(seed, "assignment"));
    let plan = SimPlan {
        arms: vec![control.clone(), treatment.clone()],
        consumer_arm: in_treatment.iter().map(|&t| u8::from(t)).collect(),
    };
    let log = simulate(world.eco, world.engagement, &plan, world.sim, cfg.ticks, derive_seed(seed, "simulation"))?;
    let samples = ArmSamples {
        treat: compute_metrics(&log, &arm_units(&in_treatment, true), &window)?,
        control: compute_metrics(&log, &arm_units(&in_treatment, false), &window)?,
    };
    Ok(ConsumerAbResult { in_treatment, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SutvaReplicate {
    pub ego_estimate: f64,
    pub ego_ci95: (f64, f64),
    pub naive_estimate: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SutvaReport {
    pub metric: String,
    pub replicates: usize,
    pub ego_mean: f64,
    pub ego_se: f64,
    pub naive_mean: f64,
    pub naive_se: f64,
    /// Relative effect on the egos when every consumer is treated versus none.
    pub truth_mean: f64,
    pub truth_se: f64,
    /// Fraction of ego-cluster intervals containing `truth_mean`.
    pub ego_coverage: f64,
    pub per_replicate: Vec<SutvaReplicate>,
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

/// Estimates one creator-side effect three ways on identical worlds and
/// seeds: ego clusters, naive user-level randomization (measured on the
/// same egos, split by their own assignment), and the all-versus-none
/// contrast.
#[allow(clippy::too_many_arguments)]
pub fn sutva_bias_demo(
    world: World<'_>,
    clusters: &[EgoCluster],
    treatment: &Arm,
    control: &Arm,
    metric: Metric,
    cfg: &ExperimentConfig,
    replicates: usize,
    seed: u64,
) -> Result<SutvaReport> {
    if replicates < 30 {
        return Err(Error::config("the SUTVA comparison needs at least 30 replicates"));
    }
    let window = cfg.metric_window()?;
    let n = world.eco.n_users();
    let egos: Vec<u32> = clusters.iter().map(|c| c.ego).collect();
    let mut reps = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let rs = derive_indexed(seed, "sutva", r as u64);
        let sim_seed = derive_seed(rs, "simulation");
        let armed = assign_treatments(clusters, derive_seed(rs, "clusters"))?;
        let ego = run_ego_experiment(world, &armed, treatment, control, cfg, sim_seed)?.effect(metric)?;

        let in_treatment = bernoulli_assignment(n, 0.5, derive_seed(rs, "users"));
        let plan = SimPlan {
            arms: vec![control.clone(), treatment.clone()],
            consumer_arm: in_treatment.iter().map(|&t| u8::from(t)).collect(),
        };
        let log = simulate(world.eco, world.engagement, &plan, world.sim, cfg.ticks, sim_seed)?;
        let split =
            |want: bool| -> Vec<u32> { egos.iter().copied().filter(|&u| in_treatment[u as usize] == want).collect() };
        let naive = ArmSamples {
            treat: compute_metrics(&log, &split(true), &window)?,
            control: compute_metrics(&log, &split(false), &window)?,
        }
        .effect(metric)?;

        let run_all = |arm: &Arm| -> Result<Vec<MetricSample>> {
            let log = simulate(
                world.eco,
                world.engagement,
                &SimPlan::uniform_arm(arm.clone(), n),
                world.sim,
                cfg.ticks,
                sim_seed,
            )?;
            compute_metrics(&log, &egos, &window)
        };
        let truth = ArmSamples { treat: run_all(treatment)?, control: run_all(control)? }.effect(metric)?;
        reps.push(SutvaReplicate {
            ego_estimate: ego.delta_pct,
            ego_ci95: ego.ci95,
            naive_estimate: naive.delta_pct,
            truth: truth.delta_pct,
        });
    }
    let col = |f: fn(&SutvaReplicate) -> f64| -> Vec<f64> { reps.iter().map(f).collect() };
    let (ego_mean, ego_se) = mean_se(&col(|r| r.ego_estimate));
    let (naive_mean, naive_se) = mean_se(&col(|r| r.naive_estimate));
    let (truth_mean, truth_se) = mean_se(&col(|r| r.truth));
    let covered = reps.iter().filter(|r| r.ego_ci95.0 <= truth_mean && truth_mean <= r.ego_ci95.1).count();
    Ok(SutvaReport {
        metric: metric.name().to_string(),
        replicates,
        ego_mean,
        ego_se,
        naive_mean,
        naive_se,
        truth_mean,
        truth_se,
        ego_coverage: covered as f64 / replicates as f64,
        per_replicate: reps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EffectRow {
    Estimated(EffectEstimate),
    /// Control mean of zero; only the absolute difference is reported.
    Undefined {
        metric: String,
        absolute: f64,
    },
}

impl EffectRow {
    pub fn estimate(&self) -> Option<&EffectEstimate> {
        match self {
            EffectRow::Estimated(e) => Some(e),
            EffectRow::Undefined { .. } => None,
        }
    }
}

/// Table-shaped CSV: `metric, delta_pct, p_value, label`.
pub fn write_effects_csv<W: Write>(mut w: W, mode: &str, seed: u64, rows: &[EffectRow]) -> Result<()> {
    write_header(&mut w, EFFECTS_SCHEMA, &[("mode", mode.to_string()), ("seed", seed.to_string())])?;
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(["metric", "delta_pct", "p_value", "label"])?;
    for r in rows {
        match r {
            EffectRow::Estimated(e) => cw.write_record([
                e.metric.clone(),
                format!("{:.4}", e.delta_pct),
                format!("{:.6}", e.p_value),
                e.label(),
            ])?,
            EffectRow::Undefined { metric, .. } => {
                cw.write_record([metric.as_str(), "", "", "Undefined"])?;
            }
        }
    }
    cw.flush()?;
    Ok(())
}
