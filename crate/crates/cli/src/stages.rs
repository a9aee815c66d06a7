//! One function per subcommand. Each reads only the files it names.

use std::sync::Arc;

use anyhow::{Context, Result};
use feedshape_core::datagen::{read_examples_csv, write_examples_csv};
use feedshape_core::ecosystem::{Arm, EngagementModels, EventLog, UserProfile};
use feedshape_core::experiments::{
    assign_treatments, run_consumer_ab, run_ego_experiment, select_ego_clusters, write_effects_csv, ArmSamples,
    EffectRow, Metric, World,
};
use feedshape_core::io::{read_ecosystem, read_population_csv, write_graph_csv, write_population_csv};
use feedshape_core::models::write_eval_csv;
use feedshape_core::pipeline::{self, LabConfig};
use feedshape_core::ranking::{read_sweep_csv, sweep_alpha, write_sweep_csv, RankingPolicy};
use feedshape_core::report::{
    alpha_tradeoff, creation_curve, sensitivity_boxes, write_box_csv, write_curve_csv, write_tradeoff_csv,
};
use feedshape_core::rng::derive_seed;
use feedshape_core::{CreateModel, Error, UtilitySnapshot};
use serde::Serialize;

use crate::files::*;

pub fn simulate(cfg: &LabConfig, dir: &RunDir) -> Result<()> {
    dir.claim(&[CONFIG, EVENTS, POPULATION, GRAPH, ENGAGEMENT])?;
    let (eco, engagement) = pipeline::build_world(cfg)?;
    let log = pipeline::simulate_history(cfg, &eco, &engagement)?;
    log::info!("{} users, {} edges, {} events", eco.n_users(), eco.graph.n_edges(), log.len());
    dir.write_str(CONFIG, &toml::to_string(cfg).context("serializing the resolved config")?)?;
    dir.write_with(EVENTS, |w| Ok(log.write_jsonl(w)?))?;
    dir.write_with(POPULATION, |w| Ok(write_population_csv(w, &eco)?))?;
    dir.write_with(GRAPH, |w| Ok(write_graph_csv(w, &eco)?))?;
    dir.write_str(ENGAGEMENT, &serde_json::to_string_pretty(&engagement)?)?;
    Ok(())
}

fn read_profiles(dir: &RunDir) -> Result<Vec<UserProfile>> {
    Ok(read_population_csv(&dir.read(POPULATION)?)?.into_iter().map(|m| m.profile).collect())
}

fn read_events(dir: &RunDir) -> Result<EventLog> {
    let log = EventLog::read_jsonl(dir.open(EVENTS)?)?;
    log.validate()?;
    Ok(log)
}

fn read_model(dir: &RunDir) -> Result<CreateModel> {
    Ok(CreateModel::from_json(&dir.read(MODEL)?)?)
}

pub fn train(cfg: &LabConfig, dir: &RunDir) -> Result<()> {
    dir.claim(&[EXAMPLES, MODEL, EVAL_REPORT])?;
    let log = read_events(dir)?;
    let profiles = read_profiles(dir)?;
    let examples = pipeline::training_examples(cfg, &log, &profiles, cfg.model.interaction_mode())?;
    let splits = pipeline::split(cfg, &examples)?;
    log::info!(
        "{} examples ({} train, {} valid, {} test)",
        examples.len(),
        splits.train.len(),
        splits.valid.len(),
        splits.test.len()
    );
    let model = pipeline::fit_model(cfg, &splits)?;
    let reports = pipeline::evaluate(&model, &splits.test)?;
    let family = serde_json::to_value(model.family())?;
    let family = family.as_str().unwrap_or("unknown");
    dir.write_with(EXAMPLES, |w| Ok(write_examples_csv(w, &examples, &cfg.data.bucket_edges)?))?;
    dir.write_str(MODEL, &model.to_json()?)?;
    dir.write_with(EVAL_REPORT, |w| Ok(write_eval_csv(w, family, &reports)?))?;
    Ok(())
}

pub fn estimate(cfg: &LabConfig, dir: &RunDir) -> Result<()> {
    dir.claim(&[SNAPSHOT])?;
    let model = read_model(dir)?;
    let log = read_events(dir)?;
    let profiles = read_profiles(dir)?;
    let snapshot = pipeline::estimate_snapshot(cfg, &model, &log, &profiles)?;
    let increasing = snapshot.curves.iter().filter(|c| c.increasing()).count();
    if increasing > 0 {
        log::warn!("{increasing} of {} users have an increasing fitted sensitivity", snapshot.len());
    }
    dir.write_with(SNAPSHOT, |w| Ok(snapshot.write_csv(w)?))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentMode {
    Consumer,
    Ego,
}

impl ExperimentMode {
    fn name(self) -> &'static str {
        match self {
            ExperimentMode::Consumer => "consumer",
            ExperimentMode::Ego => "ego",
        }
    }
}

#[derive(Serialize)]
struct ExperimentSummary<'a> {
    mode: &'a str,
    seed: u64,
    stage_seed: u64,
    treatment_policy: String,
    control_policy: String,
    alpha: f64,
    aa: bool,
    feedback_multiplier: f64,
    n_treat: usize,
    n_control: usize,
    design: feedshape_core::experiments::ExperimentConfig,
    effects: &'a [EffectRow],
}

struct Loaded {
    eco: feedshape_core::ecosystem::Ecosystem,
    engagement: EngagementModels,
}

fn load_world(dir: &RunDir) -> Result<Loaded> {
    let eco = read_ecosystem(&dir.read(POPULATION)?, &dir.read(GRAPH)?)?;
    let engagement: EngagementModels =
        serde_json::from_str(&dir.read(ENGAGEMENT)?).map_err(|e| Error::schema(format!("{ENGAGEMENT}: {e}")))?;
    Ok(Loaded { eco, engagement })
}

fn load_snapshot(cfg: &LabConfig, dir: &RunDir) -> Result<Option<Arc<UtilitySnapshot>>> {
    if cfg.policy.kind.needs_snapshot() {
        Ok(Some(Arc::new(UtilitySnapshot::read_csv(&dir.read(SNAPSHOT)?)?)))
    } else {
        Ok(None)
    }
}

fn all_metrics() -> Vec<Metric> {
    Metric::CREATOR.iter().chain(Metric::CONSUMER.iter()).copied().collect()
}

pub fn experiment(cfg: &LabConfig, dir: &RunDir, mode: ExperimentMode, aa: bool) -> Result<()> {
    let csv_name = format!("experiment_{}.csv", mode.name());
    let json_name = format!("experiment_{}.json", mode.name());
    dir.claim(&[&csv_name, &json_name])?;
    let world = load_world(dir)?;
    let snapshot = load_snapshot(cfg, dir)?;
    let treated_policy = pipeline::policy(cfg.policy.kind, cfg.policy.alpha, snapshot)?;
    let control = Arm::new(if aa { treated_policy.clone() } else { RankingPolicy::consumer_only() });
    let mut treatment = Arm::new(treated_policy);
    if !aa {
        treatment.feedback_multiplier = cfg.experiment.effect_multiplier;
    }
    let w = World { eco: &world.eco, engagement: &world.engagement, sim: &cfg.simulation };
    let stage_seed = cfg.stage_seed(&format!("experiment_{}", mode.name()));
    let samples: ArmSamples = match mode {
        ExperimentMode::Consumer => run_consumer_ab(w, &treatment, &control, &cfg.experiment, stage_seed)?.samples,
        ExperimentMode::Ego => {
            let e = &cfg.experiment;
            let clusters = select_ego_clusters(
                &world.eco.graph,
                e.n_egos,
                e.min_alters,
                e.max_overlap,
                derive_seed(stage_seed, "selection"),
            )?;
            let armed = assign_treatments(&clusters, derive_seed(stage_seed, "assignment"))?;
            run_ego_experiment(w, &armed, &treatment, &control, e, derive_seed(stage_seed, "simulation"))?
        }
    };
    let effects = samples.effects(&all_metrics());
    for row in &effects {
        match row {
            EffectRow::Estimated(e) => log::info!("{:28} {:>9} (p = {:.4})", e.metric, e.label(), e.p_value),
            EffectRow::Undefined { metric, absolute } => log::info!("{metric:28} undefined (absolute {absolute})"),
        }
    }
    let summary = ExperimentSummary {
        mode: mode.name(),
        seed: cfg.seed,
        stage_seed,
        treatment_policy: treatment.policy.kind.to_string(),
        control_policy: control.policy.kind.to_string(),
        alpha: cfg.policy.alpha,
        aa,
        feedback_multiplier: treatment.feedback_multiplier,
        n_treat: samples.treat.len(),
        n_control: samples.control.len(),
        design: cfg.experiment,
        effects: &effects,
    };
    dir.write_with(&csv_name, |w| Ok(write_effects_csv(w, mode.name(), cfg.seed, &effects)?))?;
    dir.write_str(&json_name, &serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

pub fn sweep(cfg: &LabConfig, dir: &RunDir) -> Result<()> {
    dir.claim(&[SWEEP])?;
    let world = load_world(dir)?;
    let snapshot = load_snapshot(cfg, dir)?;
    let seed = cfg.stage_seed("sweep");
    let rows = sweep_alpha(
        &world.eco,
        &world.engagement,
        &cfg.simulation,
        cfg.policy.kind,
        snapshot,
        &cfg.sweep.alphas,
        &cfg.sweep.config(),
        seed,
    )?;
    for r in &rows {
        log::info!(
            "alpha {:.2}: ctr {:.4}, top-quartile share {:.4}",
            r.alpha,
            r.consumer_ctr,
            r.top_quartile_feedback_share
        );
    }
    dir.write_with(SWEEP, |w| Ok(write_sweep_csv(w, &rows, seed)?))?;
    Ok(())
}

/// The trade-off file is produced only when a sweep has been run.
pub fn report(dir: &RunDir) -> Result<()> {
    let with_sweep = dir.exists(SWEEP);
    let mut outputs = vec![CURVE, BOXES];
    if with_sweep {
        outputs.push(TRADEOFF);
    }
    dir.claim(&outputs)?;
    let (edges, examples) = read_examples_csv(&dir.read(EXAMPLES)?)?;
    let snapshot = UtilitySnapshot::read_csv(&dir.read(SNAPSHOT)?)?;
    let profiles = read_profiles(dir)?;
    let curve = creation_curve(&examples, &edges)?;
    let boxes = sensitivity_boxes(&snapshot, &profiles)?;
    dir.write_with(CURVE, |w| Ok(write_curve_csv(w, &curve)?))?;
    dir.write_with(BOXES, |w| Ok(write_box_csv(w, &boxes)?))?;
    if with_sweep {
        let points = alpha_tradeoff(&read_sweep_csv(&dir.read(SWEEP)?)?)?;
        dir.write_with(TRADEOFF, |w| Ok(write_tradeoff_csv(w, &points)?))?;
    }
    Ok(())
}
