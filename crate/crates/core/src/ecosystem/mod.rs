//! Synthetic social network with known creator behaviour.
//!
//! Edges point from consumer to creator: `u -> v` means `u` follows `v`,
//! sees `v`'s items and sends feedback to `v`.

mod behavior;
mod events;
mod graph;
mod population;
mod sim;

pub use behavior::{true_create_prob, true_first_unit_lift, GroundTruthBehavior};
pub use events::{Event, EventKind, EventLog};
pub use graph::{generate_graph, SocialGraph};
pub use population::{
    assign_population, ActivityLevel, BehaviorRange, ContributionLevel, Member, PopulationConfig, UserProfile,
    COHORT_SLOTS,
};
pub use sim::{
    engagement_features, fit_engagement_models, simulate, Arm, Ecosystem, EngagementModels, ImpressionRecord,
    SimConfig, SimPlan, Simulation,
};
