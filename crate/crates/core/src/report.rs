//! Plot data: creation probability by feedback level, sensitivity
//! distributions by cohort and the alpha trade-off.

use std::io::Write;

use serde::Serialize;

use crate::datagen::{BucketEdges, TrainingExample};
use crate::ecosystem::{ActivityLevel, ContributionLevel, UserProfile};
use crate::error::{Error, Result};
use crate::io::write_header;
use crate::ranking::SweepRow;
use crate::sensitivity::UtilitySnapshot;

pub const CURVE_SCHEMA: &str = "feedshape-creation-curve/1";
pub const BOX_SCHEMA: &str = "feedshape-sensitivity-box/1";
pub const TRADEOFF_SCHEMA: &str = "feedshape-alpha-tradeoff/1";

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Normal-approximation interval `p ± z sqrt(p(1-p)/n)`; not clipped.
pub fn wald_interval(successes: usize, n: usize, z: f64) -> Result<(f64, f64)> {
    if n == 0 || successes > n {
        return Err(Error::DegenerateData(format!("wald interval of {successes}/{n}")));
    }
    let p = successes as f64 / n as f64;
    let half = z * (p * (1.0 - p) / n as f64).sqrt();
    Ok((p - half, p + half))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    /// `All` or an activity level.
    pub group: String,
    pub feedback_level: usize,
    /// Smallest feedback count in the level.
    pub feedback_min: u32,
    pub n: usize,
    pub mean_p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Observed creation rate per feedback level, overall and per activity
/// cohort. Empty cells are skipped.
pub fn creation_curve(examples: &[TrainingExample], edges: &BucketEdges) -> Result<Vec<CurvePoint>> {
    if examples.is_empty() {
        return Err(Error::DegenerateData("no examples for the creation curve".into()));
    }
    let groups: Vec<(String, Option<ActivityLevel>)> = std::iter::once(("All".to_string(), None))
        .chain(ActivityLevel::ALL.iter().map(|l| (l.to_string(), Some(*l))))
        .collect();
    let mut out = Vec::new();
    for (name, level) in groups {
        let mut counts = vec![(0usize, 0usize); edges.k() + 1];
        for ex in examples.iter().filter(|e| level.is_none_or(|l| e.activity_level == l)) {
            let c = &mut counts[ex.features.a_bucket];
            c.0 += usize::from(ex.label);
            c.1 += 1;
        }
        for (bucket, &(pos, n)) in counts.iter().enumerate().skip(1) {
            if n == 0 {
                continue;
            }
            let (lo, hi) = wald_interval(pos, n, Z95)?;
            out.push(CurvePoint {
                group: name.clone(),
                feedback_level: bucket,
                feedback_min: edges.edges()[bucket - 1],
                n,
                mean_p: pos as f64 / n as f64,
                ci_lo: lo,
                ci_hi: hi,
            });
        }
    }
    Ok(out)
}

pub fn write_curve_csv<W: Write>(mut w: W, points: &[CurvePoint]) -> Result<()> {
    write_header(&mut w, CURVE_SCHEMA, &[("z", Z95.to_string())])?;
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(["group", "feedback_level", "feedback_min", "n", "mean_p", "ci_lo", "ci_hi"])?;
    for p in points {
        cw.write_record([
            p.group.clone(),
            p.feedback_level.to_string(),
            p.feedback_min.to_string(),
            p.n.to_string(),
            format!("{:.6}", p.mean_p),
            format!("{:.6}", p.ci_lo),
            format!("{:.6}", p.ci_hi),
        ])?;
    }
    cw.flush()?;
    Ok(())
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxStats {
    pub segmentation: &'static str,
    pub group: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    fn from_values(segmentation: &'static str, group: String, mut v: Vec<f64>) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Self {
            segmentation,
            group,
            n: v.len(),
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Five-number summaries of the first-level delta, by activity level and
/// by contribution level. Cohorts without users are omitted.
pub fn sensitivity_boxes(snapshot: &UtilitySnapshot, profiles: &[UserProfile]) -> Result<Vec<BoxStats>> {
    if profiles.len() != snapshot.len() {
        return Err(Error::contract(format!("snapshot has {} users, population {}", snapshot.len(), profiles.len())));
    }
    let first = |p: &UserProfile| snapshot.curves[p.user_id as usize].deltas[0];
    let mut out = Vec::new();
    for level in ActivityLevel::ALL {
        let v = profiles.iter().filter(|p| p.activity_level == level).map(first).collect();
        out.extend(BoxStats::from_values("activity", level.to_string(), v));
    }
    for level in ContributionLevel::ALL {
        let v = profiles.iter().filter(|p| p.contribution_level == level).map(first).collect();
        out.extend(BoxStats::from_values("contribution", level.to_string(), v));
    }
    Ok(out)
}

pub fn write_box_csv<W: Write>(mut w: W, boxes: &[BoxStats]) -> Result<()> {
    write_header(&mut w, BOX_SCHEMA, &[("statistic", "delta_1".to_string())])?;
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(["segmentation", "group", "n", "min", "q1", "median", "q3", "max"])?;
    for b in boxes {
        cw.write_record([
            b.segmentation.to_string(),
            b.group.clone(),
            b.n.to_string(),
            format!("{:.8}", b.min),
            format!("{:.8}", b.q1),
            format!("{:.8}", b.median),
            format!("{:.8}", b.q3),
            format!("{:.8}", b.max),
        ])?;
    }
    cw.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub alpha: f64,
    pub consumer_ctr: f64,
    pub viral_actions: f64,
    pub top_quartile_feedback_share: f64,
    /// Relative to the `alpha = 1` row.
    pub ctr_change_pct: f64,
    pub top_share_change_pct: f64,
}

/// Changes against the pure consumer ranking, which must be in the sweep.
pub fn alpha_tradeoff(rows: &[SweepRow]) -> Result<Vec<TradeoffPoint>> {
    let base = rows
        .iter()
        .find(|r| r.alpha == 1.0)
        .ok_or_else(|| Error::config("the alpha sweep has no alpha = 1 reference row"))?;
    let pct = |v: f64, b: f64| if b != 0.0 { 100.0 * (v - b) / b } else { f64::NAN };
    Ok(rows
        .iter()
        .map(|r| TradeoffPoint {
            alpha: r.alpha,
            consumer_ctr: r.consumer_ctr,
            viral_actions: r.viral_actions,
            top_quartile_feedback_share: r.top_quartile_feedback_share,
            ctr_change_pct: pct(r.consumer_ctr, base.consumer_ctr),
            top_share_change_pct: pct(r.top_quartile_feedback_share, base.top_quartile_feedback_share),
        })
        .collect())
}

pub fn write_tradeoff_csv<W: Write>(mut w: W, points: &[TradeoffPoint]) -> Result<()> {
    write_header(&mut w, TRADEOFF_SCHEMA, &[])?;
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record([
        "alpha",
        "consumer_ctr",
        "viral_actions",
        "top_quartile_feedback_share",
        "ctr_change_pct",
        "top_share_change_pct",
    ])?;
    for p in points {
        cw.write_record([
            p.alpha.to_string(),
            format!("{:.6}", p.consumer_ctr),
            format!("{:.6}", p.viral_actions),
            format!("{:.6}", p.top_quartile_feedback_share),
            format!("{:.4}", p.ctr_change_pct),
            format!("{:.4}", p.top_share_change_pct),
        ])?;
    }
    cw.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{FeatureVector, InteractionMode};

    fn example(a: u32, label: bool, level: ActivityLevel, edges: &BucketEdges) -> TrainingExample {
        TrainingExample {
            user_id: 0,
            features: FeatureVector::new(a, edges, vec![0.0], vec![0.0; 6], InteractionMode::None).unwrap(),
            label,
            activity_level: level,
            contribution_level: ContributionLevel::NonContrib,
        }
    }

    #[test]
    fn wald_matches_hand_computation() {
        // 30 of 120: p = 0.25, se = sqrt(0.25 * 0.75 / 120) = 0.0395285
        let (lo, hi) = wald_interval(30, 120, Z95).unwrap();
        let se = 0.039_528_470_752_104_74;
        assert!((lo - (0.25 - Z95 * se)).abs() < 1e-12);
        assert!((hi - (0.25 + Z95 * se)).abs() < 1e-12);
        assert!(wald_interval(1, 0, Z95).is_err());
    }

    #[test]
    fn curve_groups_by_level_and_cohort() {
        let edges = BucketEdges::default();
        let mut ex = Vec::new();
        for i in 0..40 {
            ex.push(example(0, i % 4 == 0, ActivityLevel::Daily, &edges));
            ex.push(example(3, i % 2 == 0, ActivityLevel::Monthly, &edges));
        }
        let pts = creation_curve(&ex, &edges).unwrap();
        let all: Vec<_> = pts.iter().filter(|p| p.group == "All").collect();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].n, 40);
        assert!((all[0].mean_p - 0.25).abs() < 1e-12);
        assert!((all[1].mean_p - 0.5).abs() < 1e-12);
        assert!(pts.iter().all(|p| p.group != "Weekly"));
        assert!(pts.iter().all(|p| p.ci_lo <= p.mean_p && p.mean_p <= p.ci_hi));
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-12);
        assert!((quantile_sorted(&v, 0.25) - 1.75).abs() < 1e-12);
    }

    #[test]
    fn tradeoff_needs_reference() {
        let row = |alpha: f64, ctr: f64| SweepRow {
            alpha,
            policy: crate::ranking::PolicyKind::PCreateParam,
            consumer_ctr: ctr,
            viral_actions: 1.0,
            feedback_gini: 0.5,
            top_quartile_feedback_share: 0.3,
            seeds_used: 1,
        };
        let pts = alpha_tradeoff(&[row(1.0, 0.2), row(0.5, 0.19)]).unwrap();
        assert!((pts[1].ctr_change_pct + 5.0).abs() < 1e-9);
        assert!(alpha_tradeoff(&[row(0.5, 0.19)]).is_err());
    }
}
