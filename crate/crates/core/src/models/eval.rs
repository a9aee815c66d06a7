use std::io::Write;

use serde::Serialize;

use super::metrics::{auprc, auroc};
use super::CreateModel;
use crate::datagen::TrainingExample;
use crate::ecosystem::{ActivityLevel, ContributionLevel};
use crate::error::{Error, Result};
use crate::io::write_header;

pub const EVAL_SCHEMA: &str = "feedshape-eval/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Segmentation {
    Activity,
    Contribution,
}

impl Segmentation {
    fn segments(self) -> Vec<&'static str> {
        match self {
            Segmentation::Activity => ActivityLevel::ALL.iter().map(|l| l.as_str()).collect(),
            Segmentation::Contribution => ContributionLevel::ALL.iter().map(|l| l.as_str()).collect(),
        }
    }

    fn of(self, e: &TrainingExample) -> &'static str {
        match self {
            Segmentation::Activity => e.activity_level.as_str(),
            Segmentation::Contribution => e.contribution_level.as_str(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Segmentation::Activity => "activity",
            Segmentation::Contribution => "contribution",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub segment: String,
    pub n: usize,
    pub positives: usize,
    /// `None` when the segment lacks a class.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub segmentation: Segmentation,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, segment: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.segment == segment)
    }

    pub fn all(&self) -> &EvalRow {
        &self.rows[0]
    }
}

pub const ALL_SEGMENT: &str = "All";

fn row(segment: &str, scores: &[f64], labels: &[bool]) -> EvalRow {
    let positives = labels.iter().filter(|&&l| l).count();
    let defined = positives > 0 && positives < labels.len();
    EvalRow {
        segment: segment.to_string(),
        n: labels.len(),
        positives,
        auroc: if defined { auroc(scores, labels).ok() } else { None },
        auprc: if defined { auprc(scores, labels).ok() } else { None },
    }
}

/// "All" row followed by one row per segment present in `test`.
pub fn segment_eval_scores(scores: &[f64], test: &[TrainingExample], segmentation: Segmentation) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::DegenerateData("empty test set".into()));
    }
    if scores.len() != test.len() {
        return Err(Error::contract("one score per test example required"));
    }
    let labels: Vec<bool> = test.iter().map(|e| e.label).collect();
    let mut rows = vec![row(ALL_SEGMENT, scores, &labels)];
    for seg in segmentation.segments() {
        let idx: Vec<usize> = (0..test.len()).filter(|&i| segmentation.of(&test[i]) == seg).collect();
        if idx.is_empty() {
            continue;
        }
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        rows.push(row(seg, &s, &l));
    }
    Ok(EvalReport { segmentation, rows })
}

pub fn segment_eval(model: &CreateModel, test: &[TrainingExample], segmentation: Segmentation) -> Result<EvalReport> {
    let scores = test.iter().map(|e| model.predict(&e.features)).collect::<Result<Vec<_>>>()?;
    segment_eval_scores(&scores, test, segmentation)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// Table-shaped CSV: one block of rows per report.
pub fn write_eval_csv<W: Write>(mut w: W, model_family: &str, reports: &[EvalReport]) -> Result<()> {
    write_header(&mut w, EVAL_SCHEMA, &[("model", model_family.to_string())])?;
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(["segmentation", "segment", "n", "positives", "auroc", "auprc"])?;
    for r in reports {
        for row in &r.rows {
            cw.write_record([
                r.segmentation.as_str().to_string(),
                row.segment.clone(),
                row.n.to_string(),
                row.positives.to_string(),
                opt(row.auroc),
                opt(row.auprc),
            ])?;
        }
    }
    cw.flush()?;
    Ok(())
}
