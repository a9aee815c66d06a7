//! Run configuration and the offline stages shared by the command line and
//! the test suites. Each stage draws its randomness from a seed derived
//! from the root seed and the stage name.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datagen::{
    collect_examples, features_at, split_examples, BucketEdges, InteractionMode, Splits, TimelineConfig,
    TrainingExample,
};
use crate::ecosystem::{
    fit_engagement_models, simulate, Ecosystem, EngagementModels, EventLog, PopulationConfig, SimConfig, SimPlan,
    UserProfile,
};
use crate::error::{Error, Result};
use crate::experiments::ExperimentConfig;
use crate::models::{
    segment_eval, train_gbt, train_logistic, CreateModel, EvalReport, GbtParams, ModelFamily, Segmentation,
};
use crate::ranking::{PolicyKind, RankingPolicy, SweepConfig};
use crate::rng::derive_seed;
use crate::sensitivity::{build_snapshot, LevelGrid, UtilitySnapshot, DEFAULT_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabConfig {
    pub seed: u64,
    pub ecosystem: EcosystemConfig,
    #[serde(default)]
    pub simulation: SimConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_mean_degree() -> f64 {
    10.0
}

fn default_rewire() -> f64 {
    0.1
}

fn default_history() -> u32 {
    70
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcosystemConfig {
    pub n_users: usize,
    #[serde(default = "default_mean_degree")]
    pub mean_degree: f64,
    #[serde(default = "default_rewire")]
    pub rewire_prob: f64,
    /// Length of the simulated history the offline stages learn from.
    #[serde(default = "default_history")]
    pub history_ticks: u32,
    #[serde(default)]
    pub population: PopulationConfig,
}

impl EcosystemConfig {
    pub fn new(n_users: usize) -> Self {
        Self {
            n_users,
            mean_degree: default_mean_degree(),
            rewire_prob: default_rewire(),
            history_ticks: default_history(),
            population: PopulationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub timeline: TimelineConfig,
    pub bucket_edges: BucketEdges,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { timeline: TimelineConfig::default(), bucket_edges: BucketEdges::default(), split: [0.7, 0.15, 0.15] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: ModelFamily,
    /// Feedback-level by cohort cross terms (logistic only).
    pub interactions: bool,
    pub l2_grid: Vec<f64>,
    pub gbt: GbtParams,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: ModelFamily::Logistic,
            interactions: true,
            l2_grid: vec![0.1, 1.0, 10.0],
            gbt: GbtParams::default(),
        }
    }
}

impl ModelConfig {
    pub fn interaction_mode(&self) -> InteractionMode {
        if self.family == ModelFamily::Logistic && self.interactions {
            InteractionMode::CohortCross
        } else {
            InteractionMode::None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    pub floor: f64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self { floor: DEFAULT_FLOOR }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub alpha: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { kind: PolicyKind::PCreateParam, alpha: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub alphas: Vec<f64>,
    pub ticks: u32,
    pub warmup: u32,
    pub seeds: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        let s = SweepConfig::default();
        Self { alphas: vec![1.0, 0.75, 0.5, 0.25, 0.0], ticks: s.ticks, warmup: s.warmup, seeds: s.seeds }
    }
}

impl SweepSection {
    pub fn config(&self) -> SweepConfig {
        SweepConfig { ticks: self.ticks, warmup: self.warmup, seeds: self.seeds }
    }
}

impl LabConfig {
    pub fn new(seed: u64, n_users: usize) -> Self {
        Self {
            seed,
            ecosystem: EcosystemConfig::new(n_users),
            simulation: SimConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            sensitivity: SensitivityConfig::default(),
            policy: PolicyConfig::default(),
            experiment: ExperimentConfig::default(),
            sweep: SweepSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ecosystem.n_users < 2 {
            return Err(Error::config("ecosystem.n_users must be >= 2"));
        }
        self.ecosystem.population.validate()?;
        self.simulation.validate()?;
        self.data.timeline.validate()?;
        self.model.gbt.validate()?;
        if self.ecosystem.history_ticks < self.data.timeline.required_ticks() {
            return Err(Error::config(format!(
                "ecosystem.history_ticks={} is shorter than the timeline needs ({})",
                self.ecosystem.history_ticks,
                self.data.timeline.required_ticks()
            )));
        }
        if self.model.l2_grid.is_empty() || self.model.l2_grid.iter().any(|l| l.is_nan() || *l < 0.0) {
            return Err(Error::config("model.l2_grid must be nonempty and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.policy.alpha) {
            return Err(Error::config("policy.alpha must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }
}

/// Graph, population, affinities and the learned engagement estimators.
pub fn build_world(cfg: &LabConfig) -> Result<(Ecosystem, EngagementModels)> {
    let e = &cfg.ecosystem;
    let eco = Ecosystem::generate(
        e.n_users,
        e.mean_degree,
        e.rewire_prob,
        &e.population,
        &cfg.simulation,
        cfg.stage_seed("ecosystem"),
    )?;
    let engagement = fit_engagement_models(&eco, &cfg.simulation, cfg.stage_seed("engagement"))?;
    Ok((eco, engagement))
}

/// History under the consumer-only ranker, the input of the offline stages.
pub fn simulate_history(cfg: &LabConfig, eco: &Ecosystem, engagement: &EngagementModels) -> Result<EventLog> {
    let plan = SimPlan::uniform(RankingPolicy::consumer_only(), eco.n_users());
    simulate(eco, engagement, &plan, &cfg.simulation, cfg.ecosystem.history_ticks, cfg.stage_seed("history"))
}

pub fn training_examples(
    cfg: &LabConfig,
    log: &EventLog,
    profiles: &[UserProfile],
    mode: InteractionMode,
) -> Result<Vec<TrainingExample>> {
    collect_examples(log, profiles, &cfg.data.timeline, &cfg.data.bucket_edges, mode)
}

pub fn split(cfg: &LabConfig, examples: &[TrainingExample]) -> Result<Splits<TrainingExample>> {
    let [a, b, c] = cfg.data.split;
    split_examples(examples, (a, b, c), cfg.stage_seed("split"))
}

pub fn fit_model(cfg: &LabConfig, splits: &Splits<TrainingExample>) -> Result<CreateModel> {
    let edges = &cfg.data.bucket_edges;
    Ok(match cfg.model.family {
        ModelFamily::Logistic => {
            CreateModel::Logistic(train_logistic(&splits.train, &splits.valid, edges, &cfg.model.l2_grid)?)
        }
        ModelFamily::Gbt => CreateModel::Gbt(train_gbt(&splits.train, &splits.valid, edges, &cfg.model.gbt)?),
    })
}

/// Test-set reports by activity and by contribution level.
pub fn evaluate(model: &CreateModel, test: &[TrainingExample]) -> Result<Vec<EvalReport>> {
    [Segmentation::Activity, Segmentation::Contribution].into_iter().map(|s| segment_eval(model, test, s)).collect()
}

/// Snapshot for every user from the last feature window of `log`.
pub fn estimate_snapshot(
    cfg: &LabConfig,
    model: &CreateModel,
    log: &EventLog,
    profiles: &[UserProfile],
) -> Result<UtilitySnapshot> {
    let schema = model.schema();
    if schema.edges != cfg.data.bucket_edges {
        return Err(Error::contract("model bucket edges differ from the configured ones"));
    }
    let features = features_at(log, profiles, log.n_ticks, cfg.data.timeline.u, &schema.edges, schema.interactions)?;
    let grid = LevelGrid::from_edges(&schema.edges)?;
    build_snapshot(model, &features, &grid, cfg.sensitivity.floor)
}

pub fn policy(kind: PolicyKind, alpha: f64, snapshot: Option<Arc<UtilitySnapshot>>) -> Result<RankingPolicy> {
    RankingPolicy::new(kind, alpha, if kind.needs_snapshot() { snapshot } else { None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_pipeline_end_to_end() {
        let mut cfg = LabConfig::new(5, 600);
        cfg.validate().unwrap();
        let (eco, eng) = build_world(&cfg).unwrap();
        let log = simulate_history(&cfg, &eco, &eng).unwrap();
        let profiles = eco.profiles();
        let ex = training_examples(&cfg, &log, &profiles, cfg.model.interaction_mode()).unwrap();
        let splits = split(&cfg, &ex).unwrap();
        let model = fit_model(&cfg, &splits).unwrap();
        let reports = evaluate(&model, &splits.test).unwrap();
        assert_eq!(reports[0].all().n, splits.test.len());
        let snap = estimate_snapshot(&cfg, &model, &log, &profiles).unwrap();
        assert_eq!(snap.len(), 600);
        cfg.data.bucket_edges = BucketEdges::new(vec![0, 3]).unwrap();
        assert!(matches!(estimate_snapshot(&cfg, &model, &log, &profiles), Err(Error::Contract(_))));
    }

    #[test]
    fn short_history_is_rejected() {
        let mut cfg = LabConfig::new(1, 100);
        cfg.ecosystem.history_ticks = 20;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
