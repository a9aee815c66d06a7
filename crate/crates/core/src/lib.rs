//! Feedback shaping for content ecosystems.
//!
//! The crate is organised as a small offline/online pipeline over a
//! simulated social network whose creator behaviour is known exactly:
//!
//! - [`ecosystem`]: graph, population, ground-truth behaviour and the
//!   tick-based feed simulator producing an [`EventLog`].
//! - [`datagen`]: windowed feature/label extraction from an event log.
//! - [`models`]: the creation-probability ("pCreate") models, a penalised
//!   logistic regression and a gradient boosted tree ensemble, plus
//!   AUROC/AUPRC evaluation.
//! - [`sensitivity`]: per-user feedback sensitivity and its exponential
//!   decay fit, published as a utility snapshot.
//! - [`ranking`]: feed scoring that blends consumer and creator utility.
//! - [`experiments`]: consumer A/B tests, ego-cluster experiments and
//!   effect estimation.
//! - [`report`]: plot data for the creation curve, sensitivity boxes and
//!   the alpha trade-off.

pub mod datagen;
pub mod ecosystem;
pub mod error;
pub mod experiments;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod ranking;
pub mod report;
pub mod rng;
pub mod sensitivity;

pub use datagen::{BucketEdges, FeatureVector, TimelineConfig, TrainingExample};
pub use ecosystem::{
    ActivityLevel, ContributionLevel, Event, EventKind, EventLog, GroundTruthBehavior, SocialGraph, UserProfile,
};
pub use error::{Error, Result};
pub use models::{CreateModel, GbtModel, LogisticModel};
pub use ranking::{PolicyKind, RankingPolicy};
pub use sensitivity::{LevelGrid, SensitivityCurve, UtilitySnapshot};

/// Logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
