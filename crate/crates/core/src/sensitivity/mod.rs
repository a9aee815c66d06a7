//! Per-user feedback sensitivity: level-wise creation-probability slopes
//! and their log-linear (exponential decay) fit.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datagen::{BucketEdges, FeatureVector};
use crate::error::{Error, Result};
use crate::io::{header_value, split_header, write_header};
use crate::models::CreateModel;

pub const SNAPSHOT_SCHEMA: &str = "feedshape-snapshot/1";
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// Representative feedback values `v_1 < ... < v_K` (with `v_0 = 0`
/// implied) at which sensitivities are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelGrid {
    values: Vec<f64>,
}

impl LevelGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::config("level grid needs K >= 2 values"));
        }
        if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::config("level grid values must be finite and > 0"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("level grid values must be strictly increasing"));
        }
        Ok(Self { values })
    }

    /// Interval minima of the nonzero feedback levels.
    pub fn from_edges(edges: &BucketEdges) -> Result<Self> {
        Self::new(edges.edges()[1..].iter().map(|&e| f64::from(e)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    /// The K x 2 design matrix `[1, v_k]`.
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k(), 2, |i, j| if j == 0 { 1.0 } else { self.values[i] })
    }

    fn counts(&self) -> Result<Vec<u32>> {
        self.values
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 && v <= f64::from(u32::MAX) {
                    Ok(v as u32)
                } else {
                    Err(Error::contract(format!("grid value {v} is not a feedback count")))
                }
            })
            .collect()
    }
}

/// `(b, tau)` fit of `ln(delta_k) = b + tau * v_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub b: f64,
    pub tau: f64,
    pub residual_rss: f64,
    /// 1-based levels whose delta was raised to the floor.
    pub clamped_levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub user_id: u32,
    /// Unclamped level-wise slopes.
    pub deltas: Vec<f64>,
    pub b: f64,
    pub tau: f64,
    pub residual_rss: f64,
    pub clamped_levels: Vec<usize>,
}

impl SensitivityCurve {
    /// Fitted sensitivity grows with feedback.
    pub fn increasing(&self) -> bool {
        self.tau > 0.0
    }
}

/// `P(a + delta_a) - P(a)` with every other feature held fixed.
pub fn delta_at(model: &CreateModel, features: &FeatureVector, delta_a: u32) -> Result<f64> {
    if delta_a == 0 {
        return Err(Error::config("delta_a must be >= 1"));
    }
    let edges = &model.schema().edges;
    let up = features.with_feedback(features.a + delta_a, edges);
    Ok(model.predict(&up)? - model.predict(features)?)
}

/// `[P(v_k) - P(v_{k-1})] / (v_k - v_{k-1})` for `k = 1..K`, `v_0 = 0`.
pub fn level_deltas(model: &CreateModel, features: &FeatureVector, grid: &LevelGrid) -> Result<Vec<f64>> {
    let edges = &model.schema().edges;
    let mut prev_v = 0u32;
    let mut prev_p = model.predict(&features.with_feedback(0, edges))?;
    let mut out = Vec::with_capacity(grid.k());
    for v in grid.counts()? {
        let p = model.predict(&features.with_feedback(v, edges))?;
        out.push((p - prev_p) / f64::from(v - prev_v));
        prev_v = v;
        prev_p = p;
    }
    Ok(out)
}

pub fn fit_exp_decay(grid: &LevelGrid, deltas: &[f64], floor: f64) -> Result<DecayFit> {
    fit_exp_decay_on(grid.values(), deltas, floor)
}

/// Least squares of `ln(max(delta, floor))` on `[1, v]`, solved through the
/// centred normal equations.
pub fn fit_exp_decay_on(v: &[f64], deltas: &[f64], floor: f64) -> Result<DecayFit> {
    if v.len() != deltas.len() {
        return Err(Error::contract("grid and delta lengths differ"));
    }
    if v.len() < 2 {
        return Err(Error::SingularDesign("need at least two levels".into()));
    }
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::config("delta floor must be > 0"));
    }
    if deltas.iter().any(|d| d.is_nan()) {
        return Err(Error::contract("NaN delta"));
    }
    let mut clamped_levels = Vec::new();
    let logs: Vec<f64> = deltas
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            if d <= floor {
                clamped_levels.push(k + 1);
                floor.ln()
            } else {
                d.ln()
            }
        })
        .collect();
    let n = v.len() as f64;
    let vbar = v.iter().sum::<f64>() / n;
    let lbar = logs.iter().sum::<f64>() / n;
    let sxx: f64 = v.iter().map(|x| (x - vbar) * (x - vbar)).sum();
    let scale: f64 = v.iter().map(|x| x * x).sum();
    if v.iter().all(|&x| x == v[0]) || sxx <= 1e-14 * scale {
        return Err(Error::SingularDesign("all grid values are equal".into()));
    }
    let sxy: f64 = v.iter().zip(&logs).map(|(x, l)| (x - vbar) * (l - lbar)).sum();
    let tau = sxy / sxx;
    let b = lbar - tau * vbar;
    let residual_rss = v.iter().zip(&logs).map(|(x, l)| (l - b - tau * x).powi(2)).sum();
    Ok(DecayFit { b, tau, residual_rss, clamped_levels })
}

pub fn sensitivity_curve(
    model: &CreateModel,
    user_id: u32,
    features: &FeatureVector,
    grid: &LevelGrid,
    floor: f64,
) -> Result<SensitivityCurve> {
    let deltas = level_deltas(model, features, grid)?;
    let fit = fit_exp_decay(grid, &deltas, floor)?;
    Ok(SensitivityCurve {
        user_id,
        deltas,
        b: fit.b,
        tau: fit.tau,
        residual_rss: fit.residual_rss,
        clamped_levels: fit.clamped_levels,
    })
}

/// Per-user utility table published by the offline stage and read by the
/// ranker.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySnapshot {
    pub grid: LevelGrid,
    pub floor: f64,
    pub model_hash: String,
    /// Indexed by user id.
    pub curves: Vec<SensitivityCurve>,
}

impl UtilitySnapshot {
    pub fn curve(&self, user: u32) -> Option<&SensitivityCurve> {
        self.curves.get(user as usize)
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let grid = self.grid.values().iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        write_header(
            &mut w,
            SNAPSHOT_SCHEMA,
            &[("grid", grid), ("floor", self.floor.to_string()), ("model_sha256", self.model_hash.clone())],
        )?;
        let k = self.grid.k();
        let mut cw = csv::Writer::from_writer(w);
        let mut header = vec!["user_id".to_string(), "b".into(), "tau".into()];
        header.extend((1..=k).map(|i| format!("delta_{i}")));
        header.extend(["residual_rss".into(), "clamped_mask".into()]);
        cw.write_record(&header)?;
        for c in &self.curves {
            let mask: String = (1..=k).map(|lvl| if c.clamped_levels.contains(&lvl) { '1' } else { '0' }).collect();
            let mut rec = vec![c.user_id.to_string(), c.b.to_string(), c.tau.to_string()];
            rec.extend(c.deltas.iter().map(f64::to_string));
            rec.push(c.residual_rss.to_string());
            rec.push(mask);
            cw.write_record(&rec)?;
        }
        cw.flush()?;
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let (params, body) = split_header(text, SNAPSHOT_SCHEMA)?;
        let grid_str: String = header_value(&params, "grid")?;
        let values = grid_str
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| Error::schema("bad grid value")))
            .collect::<Result<Vec<_>>>()?;
        let grid = LevelGrid::new(values).map_err(|e| Error::schema(e.to_string()))?;
        let floor: f64 = header_value(&params, "floor")?;
        let model_hash: String = header_value(&params, "model_sha256")?;
        let k = grid.k();
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let mut curves = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            if rec.len() != k + 5 {
                return Err(Error::schema(format!("snapshot row {row} has {} columns", rec.len())));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::schema(format!("bad number {:?}", &rec[i])))
            };
            let user_id: u32 = rec[0].parse().map_err(|_| Error::schema("bad user_id"))?;
            if user_id as usize != row {
                return Err(Error::schema("snapshot rows must be in user order"));
            }
            let mask = &rec[k + 4];
            if mask.len() != k || mask.chars().any(|c| c != '0' && c != '1') {
                return Err(Error::schema(format!("bad clamped_mask {mask:?}")));
            }
            curves.push(SensitivityCurve {
                user_id,
                b: num(1)?,
                tau: num(2)?,
                deltas: (3..3 + k).map(num).collect::<Result<_>>()?,
                residual_rss: num(3 + k)?,
                clamped_levels: mask.chars().enumerate().filter(|(_, c)| *c == '1').map(|(i, _)| i + 1).collect(),
            });
        }
        Ok(Self { grid, floor, model_hash, curves })
    }
}

/// One curve per user; `features[i]` must describe user `i`.
pub fn build_snapshot(
    model: &CreateModel,
    features: &[FeatureVector],
    grid: &LevelGrid,
    floor: f64,
) -> Result<UtilitySnapshot> {
    let curves = features
        .iter()
        .enumerate()
        .map(|(i, fv)| sensitivity_curve(model, i as u32, fv, grid, floor))
        .collect::<Result<Vec<_>>>()?;
    let increasing = curves.iter().filter(|c| c.increasing()).count();
    if increasing > 0 {
        log::info!("{increasing} of {} users have an increasing fitted sensitivity", curves.len());
    }
    Ok(UtilitySnapshot { grid: grid.clone(), floor, model_hash: model.hash()?, curves })
}
