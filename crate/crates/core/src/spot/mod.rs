//! Supported policy optimization: TD3 with twin critics and target policy
//! smoothing, whose actor loss adds a behavior-density regularizer,
//!
//! ```text
//! J(actor) = mean( −Q1(s, π(s)) / α  −  λ · log π̂_β(π(s) | s) ),
//! ```
//!
//! where `α` is the minibatch mean of `|Q1(s, π(s))|` (held constant) and
//! `log π̂_β` is the single-sample CVAE estimate. With `λ = 0` the density
//! term is left out of the loss and the update is plain normalized TD3.

mod agent;
mod bc;
mod policy;
mod profile;
mod train;

pub use agent::{normalizer, ActorNoise, ActorStats, SpotAgent, UpdateOutcome, UpdateRngs, NORMALIZER_FLOOR};
pub use bc::{bc_baseline, BcConfig};
pub use policy::DeterministicPolicy;
pub use profile::{constraint_strength_profile, density_profile, nearest_rank, ConstraintProfile};
pub(crate) use train::evaluation_record;
pub use train::{evaluate, train_offline, EvalRecord, StepRecord, TrainLog};

use crate::envs::{EnvKind, RewardKind};
use crate::error::{Error, Result};

/// Sweep grid for the regularization weight on dense-reward tasks.
pub const DENSE_LAMBDA_GRID: [f64; 6] = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0];
/// Sweep grid for the regularization weight on sparse-reward tasks.
pub const SPARSE_LAMBDA_GRID: [f64; 6] = [0.025, 0.05, 0.1, 0.25, 0.5, 1.0];

pub fn lambda_grid(kind: EnvKind) -> &'static [f64] {
    match kind.spec().reward_kind {
        RewardKind::Dense => &DENSE_LAMBDA_GRID,
        RewardKind::Sparse => &SPARSE_LAMBDA_GRID,
    }
}

/// Settings of the log-density percentile summary.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileConfig {
    /// Importance samples per state.
    pub samples: usize,
    /// Size of the state subsample.
    pub states: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            states: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpotConfig {
    /// Weight of the density regularizer.
    pub lambda: f64,
    pub discount: f64,
    /// Polyak rate of the target networks.
    pub tau: f64,
    /// Standard deviation of target policy smoothing, relative to the action
    /// half-range.
    pub policy_noise: f64,
    /// Clip of the smoothing noise, relative to the action half-range.
    pub noise_clip: f64,
    /// Critic updates per actor update.
    pub policy_update_freq: usize,
    pub q_norm: bool,
    pub actor_dropout: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Latent samples in the training-time density estimate.
    pub density_samples: usize,
    /// Final constraint-strength summary.
    pub profile: ProfileConfig,
    /// State subsample of the percentile reported at every evaluation.
    pub eval_profile_states: usize,
}

impl SpotConfig {
    /// Defaults for an environment: sparse tasks use no actor dropout, the
    /// smaller actor learning rate and more evaluation episodes.
    pub fn for_env(kind: EnvKind) -> Self {
        let base = Self::default();
        match kind.spec().reward_kind {
            RewardKind::Sparse => Self {
                lambda: 0.25,
                actor_dropout: 0.0,
                actor_lr: 1e-4,
                eval_episodes: 20,
                ..base
            },
            RewardKind::Dense => Self {
                lambda: 0.2,
                actor_dropout: 0.1,
                actor_lr: 3e-4,
                eval_episodes: 10,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be a finite nonnegative number, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad(format!("discount must lie in [0, 1), got {}", self.discount));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.policy_noise >= 0.0 && self.noise_clip >= 0.0) {
            return bad("policy noise and its clip must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.actor_dropout) {
            return bad(format!("actor dropout must lie in [0, 1), got {}", self.actor_dropout));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        for (name, v) in [
            ("policy_update_freq", self.policy_update_freq),
            ("batch_size", self.batch_size),
            ("eval_interval", self.eval_interval),
            ("density_samples", self.density_samples),
            ("profile.samples", self.profile.samples),
            ("profile.states", self.profile.states),
            ("eval_profile_states", self.eval_profile_states),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }
}

impl Default for SpotConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            discount: 0.99,
            tau: 0.005,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_update_freq: 2,
            q_norm: true,
            actor_dropout: 0.1,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            batch_size: 256,
            steps: 100_000,
            eval_interval: 5_000,
            eval_episodes: 10,
            density_samples: 1,
            profile: ProfileConfig::default(),
            eval_profile_states: 256,
        }
    }
}
