//! Semi-supervised reward shaping for sparse-reward reinforcement learning.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the bottom of this file fix the common `f64` and `f32` instantiations.

pub mod analysis;
pub mod augment;
pub mod buffer;
pub mod config;
pub mod envs;
pub mod error;
pub mod estimator;
pub mod losses;
pub mod gradcheck;
pub mod mlp;
pub mod reward_set;
pub mod rng;
pub mod scalar;
pub mod schedules;
pub mod training;
pub mod trajectory;

pub use analysis::{best_score_series, consensus, gmm_fit, reward_distribution, ConsensusMatrix, GmmModel};
pub use augment::{apply_augment, double_entropy, shannon_entropy, weak_strong_pair, AugmentSpec, Pairing, PairingParams};
pub use buffer::{Entry, ReplayBuffer};
pub use config::{RunConfig, ScheduleKind};
pub use envs::{EnvSpec, Environment, Step};
pub use error::{Error, Result};
pub use estimator::{pseudo_label, select, soft_select, EstimatorParams, EstimatorShape};
pub use losses::{total_loss, Gradient, LossBreakdown, LossMode, LossSettings};
pub use reward_set::RewardSet;
pub use scalar::Scalar;
pub use schedules::{alpha_at, lambda_at, p_u_at, ScheduleState};
pub use training::{train, BackboneQ, RunRecord, TrainOutcome};
pub use trajectory::{TrajectoryMatrix, Transition};

pub type Transition64 = Transition<f64>;
pub type Transition32 = Transition<f32>;
pub type TrajectoryMatrix64 = TrajectoryMatrix<f64>;
pub type TrajectoryMatrix32 = TrajectoryMatrix<f32>;
pub type ReplayBuffer64 = ReplayBuffer<f64>;
pub type ReplayBuffer32 = ReplayBuffer<f32>;
pub type RewardSet64 = RewardSet<f64>;
pub type RewardSet32 = RewardSet<f32>;
pub type EstimatorParams64 = EstimatorParams<f64>;
pub type EstimatorParams32 = EstimatorParams<f32>;
