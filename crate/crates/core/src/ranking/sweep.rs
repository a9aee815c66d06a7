use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{PolicyKind, RankingPolicy};
use crate::ecosystem::{
    simulate, true_first_unit_lift, Ecosystem, EngagementModels, EventKind, EventLog, SimConfig, SimPlan,
};
use crate::error::{Error, Result};
use crate::io::{split_header, write_header};
use crate::rng::derive_indexed;
use crate::sensitivity::UtilitySnapshot;

pub const SWEEP_SCHEMA: &str = "feedshape-alpha-sweep/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub ticks: u32,
    /// Leading ticks excluded from the metrics.
    pub warmup: u32,
    pub seeds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { ticks: 42, warmup: 14, seeds: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub policy: PolicyKind,
    pub consumer_ctr: f64,
    /// Feedback events per measured tick.
    pub viral_actions: f64,
    pub feedback_gini: f64,
    pub top_quartile_feedback_share: f64,
    pub seeds_used: usize,
}

/// Gini coefficient of nonnegative values; 0 when all are zero.
pub fn feedback_gini(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let total: f64 = v.iter().sum();
    if v.is_empty() || total <= 0.0 {
        return 0.0;
    }
    let weighted: f64 = v.iter().enumerate().map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x).sum();
    weighted / (n * total)
}

/// Flags the quarter of users (rounded up) with the largest ground-truth
/// first-unit lift.
pub fn top_quartile_creators(eco: &Ecosystem) -> Vec<bool> {
    let lifts: Vec<f64> = eco.members.iter().map(|m| true_first_unit_lift(&m.behavior)).collect();
    let mut idx: Vec<usize> = (0..lifts.len()).collect();
    idx.sort_by(|&a, &b| lifts[b].total_cmp(&lifts[a]).then(a.cmp(&b)));
    let mut top = vec![false; lifts.len()];
    for &i in idx.iter().take(lifts.len().div_ceil(4)) {
        top[i] = true;
    }
    top
}

struct RunMetrics {
    ctr: f64,
    viral: f64,
    gini: f64,
    top_share: f64,
}

fn run_metrics(log: &EventLog, n_users: usize, top: &[bool], warmup: u32) -> RunMetrics {
    let mut received = vec![0.0; n_users];
    let (mut imps, mut clicks, mut fb) = (0u64, 0u64, 0u64);
    for e in log.events.iter().filter(|e| e.tick >= warmup) {
        match e.kind {
            EventKind::Impression => imps += 1,
            EventKind::Click => clicks += 1,
            EventKind::Feedback => {
                fb += 1;
                received[e.target as usize] += 1.0;
            }
            _ => {}
        }
    }
    let top_fb: f64 = received.iter().zip(top).filter(|(_, &t)| t).map(|(r, _)| r).sum();
    let measured = f64::from(log.n_ticks.saturating_sub(warmup).max(1));
    RunMetrics {
        ctr: if imps > 0 { clicks as f64 / imps as f64 } else { 0.0 },
        viral: fb as f64 / measured,
        gini: feedback_gini(&received),
        top_share: if fb > 0 { top_fb / fb as f64 } else { 0.0 },
    }
}

/// One row per alpha, each averaged over `cfg.seeds` simulations. The same
/// simulation seeds are reused for every alpha.
#[allow(clippy::too_many_arguments)]
pub fn sweep_alpha(
    eco: &Ecosystem,
    engagement: &EngagementModels,
    sim: &SimConfig,
    kind: PolicyKind,
    snapshot: Option<Arc<UtilitySnapshot>>,
    alpha_grid: &[f64],
    cfg: &SweepConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if alpha_grid.is_empty() {
        return Err(Error::config("alpha grid is empty"));
    }
    if cfg.seeds == 0 || cfg.warmup >= cfg.ticks {
        return Err(Error::config("sweep needs seeds >= 1 and warmup < ticks"));
    }
    let top = top_quartile_creators(eco);
    let mut rows = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        let policy = RankingPolicy::new(kind, alpha, snapshot.clone())?;
        let plan = SimPlan::uniform(policy, eco.n_users());
        let mut acc = [0.0; 4];
        for s in 0..cfg.seeds {
            let log = simulate(eco, engagement, &plan, sim, cfg.ticks, derive_indexed(seed, "sweep", s as u64))?;
            let m = run_metrics(&log, eco.n_users(), &top, cfg.warmup);
            for (a, v) in acc.iter_mut().zip([m.ctr, m.viral, m.gini, m.top_share]) {
                *a += v;
            }
        }
        let k = cfg.seeds as f64;
        rows.push(SweepRow {
            alpha,
            policy: kind,
            consumer_ctr: acc[0] / k,
            viral_actions: acc[1] / k,
            feedback_gini: acc[2] / k,
            top_quartile_feedback_share: acc[3] / k,
            seeds_used: cfg.seeds,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow], seed: u64) -> Result<()> {
    write_header(&mut w, SWEEP_SCHEMA, &[("seed", seed.to_string())])?;
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record([
        "alpha",
        "policy",
        "consumer_ctr",
        "viral_actions",
        "feedback_gini",
        "top_quartile_feedback_share",
        "seeds_used",
    ])?;
    for r in rows {
        cw.write_record([
            r.alpha.to_string(),
            r.policy.to_string(),
            format!("{:.6}", r.consumer_ctr),
            format!("{:.6}", r.viral_actions),
            format!("{:.6}", r.feedback_gini),
            format!("{:.6}", r.top_quartile_feedback_share),
            r.seeds_used.to_string(),
        ])?;
    }
    cw.flush()?;
    Ok(())
}

pub fn read_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let (_, body) = split_header(text, SWEEP_SCHEMA)?;
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 7 {
            return Err(Error::schema(format!("sweep row has {} columns", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::schema(format!("bad number {:?} in sweep file", &rec[i])))
        };
        rows.push(SweepRow {
            alpha: num(0)?,
            policy: rec[1].parse().map_err(|e: Error| Error::schema(e.to_string()))?,
            consumer_ctr: num(2)?,
            viral_actions: num(3)?,
            feedback_gini: num(4)?,
            top_quartile_feedback_share: num(5)?,
            seeds_used: rec[6].parse().map_err(|_| Error::schema("bad seeds_used in sweep file"))?,
        });
    }
    Ok(rows)
}
