//! Creation-probability models and their offline evaluation.

mod eval;
mod gbt;
mod logistic;
mod matrix;
mod metrics;

pub use eval::{
    segment_eval, segment_eval_scores, write_eval_csv, EvalReport, EvalRow, Segmentation, ALL_SEGMENT, EVAL_SCHEMA,
};
pub use gbt::{fit_gbt_raw, raw_row, split_gain, train_gbt, GbtModel, GbtParams, Node, Tree};
pub use logistic::{
    fit_logistic, logistic_design_row, train_logistic, FitResult, LinearLogit, LogisticModel, LogisticObjective,
    LogisticOptions,
};
pub use matrix::Matrix;
pub use metrics::{auprc, auroc};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{BucketEdges, FeatureVector, InteractionMode};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "feedshape-model";
pub const MODEL_VERSION: u32 = 1;

/// Feature layout a model was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub edges: BucketEdges,
    pub n_static: usize,
    pub n_activity: usize,
    pub interactions: InteractionMode,
}

impl FeatureSchema {
    pub fn for_features(fv: &FeatureVector, edges: BucketEdges, interactions: InteractionMode) -> Self {
        Self { edges, n_static: fv.static_features.len(), n_activity: fv.activity.len(), interactions }
    }

    pub fn check(&self, fv: &FeatureVector) -> Result<()> {
        if fv.static_features.len() != self.n_static || fv.activity.len() != self.n_activity {
            return Err(Error::contract(format!(
                "feature widths ({}, {}) differ from model schema ({}, {})",
                fv.static_features.len(),
                fv.activity.len(),
                self.n_static,
                self.n_activity
            )));
        }
        if fv.a_bucket != self.edges.bucketize(fv.a) {
            return Err(Error::contract("feedback level does not match the model's bucket edges"));
        }
        if self.interactions == InteractionMode::None && !fv.interactions.is_empty() {
            return Ok(());
        }
        if fv.interactions.len() != self.interactions.width(&self.edges) {
            return Err(Error::contract("interaction features do not match the model schema"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Logistic,
    Gbt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CreateModel {
    Logistic(LogisticModel),
    Gbt(GbtModel),
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: CreateModel,
}

impl CreateModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            CreateModel::Logistic(_) => ModelFamily::Logistic,
            CreateModel::Gbt(_) => ModelFamily::Gbt,
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        match self {
            CreateModel::Logistic(m) => &m.schema,
            CreateModel::Gbt(m) => &m.schema,
        }
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<f64> {
        match self {
            CreateModel::Logistic(m) => m.predict(fv),
            CreateModel::Gbt(m) => m.predict(fv),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CreateModel::Logistic(m) => m.validate(),
            CreateModel::Gbt(m) => m.validate(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument { format: MODEL_FORMAT.into(), version: MODEL_VERSION, model: self.clone() };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::schema(format!("model document: {e}")))?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(Error::schema(format!("unsupported model document {} v{}", doc.format, doc.version)));
        }
        doc.model.validate()?;
        Ok(doc.model)
    }

    /// SHA-256 of the serialized document, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}
