//! Adversarial inverse reinforcement learning for online recommendation.
//!
//! A learner policy is trained with PPO against a synthetic recommendation
//! environment. Its reward is the environment's click reward plus a bonus
//! `ln D(s, a)` from a discriminator that separates learner state-action
//! pairs from demonstrations produced by a DDPG-trained expert.
//!
//! Module map:
//!
//! - [`numeric`]: dense MLPs, exact backprop, Adam, finite-difference checks.
//! - [`envsim`]: the synthetic recommendation environment (91-dim observations,
//!   27-dim page embeddings, rewards in `0..=10`).
//! - [`policy`]: Gaussian actor and value critic.
//! - [`discriminator`]: expert-vs-learner classifier and the bonus reward.
//! - [`optim`]: GAE, PPO (clipped and adaptive-KL variants).
//! - [`expert`]: DDPG expert, OU noise, replay buffer, demonstration export.
//! - [`pipeline`]: the adversarial training loop, evaluation, CTR and
//!   occupancy diagnostics, hyper-parameter grid.
//! - [`config`], [`checkpoint`], [`metrics`]: file formats used by the CLI.

pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod envsim;
pub mod error;
pub mod expert;
pub mod metrics;
pub mod numeric;
pub mod optim;
pub mod pipeline;
pub mod policy;
pub mod seeding;

pub use error::{Error, Result};

/// Observation width: 88 static bits plus 3 interest coordinates.
pub const OBS_DIM: usize = 91;
/// Action width: one recommended-page embedding.
pub const ACTION_DIM: usize = 27;
/// Width of a concatenated state-action pair.
pub const PAIR_DIM: usize = OBS_DIM + ACTION_DIM;
