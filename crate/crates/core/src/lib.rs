//! Learning to rank candidate sites for a trial with a Plackett-Luce policy
//! trained by REINFORCE, with an entropy reward that favours diverse group
//! membership among the selected Top-K.

pub mod case_study;
pub mod checkpoint;
pub mod datagen;
pub mod domain;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod scorer;
pub mod trainer;

pub use domain::{CandidateSet, FeatureSchema, GroupDistribution, Ranking, SiteFeatures, TrialFeatures};
pub use error::{FairRankError, Result};
pub use policy::PolicyMode;
pub use rewards::{FairnessMode, RewardValue};
pub use scorer::{MlpParams, ScorerConfig};
pub use trainer::{Method, TrainConfig};
