//! Run configuration. Every field has a default, so an empty file (or no file
//! at all) describes a complete desk-scale run on the stitch maze.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spot_core::cvae::CvaeConfig;
use spot_core::data::{BehaviorConfig, Regime};
use spot_core::envs::{EnvKind, RewardKind};
use spot_core::finetune::FinetuneConfig;
use spot_core::spot::{lambda_grid, BcConfig, ProfileConfig, SpotConfig};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub regime: String,
    pub dataset_size: usize,
    /// Normalize dataset states; unset means on for dense-reward tasks and
    /// off for the sparse maze.
    pub normalize_states: Option<bool>,
    pub seeds: Vec<u64>,
    /// Root for output directories when `--out` is not given.
    pub output_root: Option<PathBuf>,
    pub behavior: BehaviorSection,
    pub vae: VaeSection,
    pub spot: SpotSection,
    pub bc: BcSection,
    pub finetune: FinetuneSection,
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "pointmaze".into(),
            regime: "stitch".into(),
            dataset_size: 50_000,
            normalize_states: None,
            seeds: vec![0, 1, 2],
            output_root: None,
            behavior: BehaviorSection::default(),
            vae: VaeSection::default(),
            spot: SpotSection::default(),
            bc: BcSection::default(),
            finetune: FinetuneSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorSection {
    pub expert_noise: f64,
    pub medium_noise: f64,
    pub medium_random_fraction: f64,
    pub replay_noise_start: f64,
    pub replay_noise_end: f64,
    pub stitch_noise: f64,
    pub stitch_start_jitter: f64,
    pub stitch_max_hops: usize,
}

impl Default for BehaviorSection {
    fn default() -> Self {
        let b = BehaviorConfig::default();
        Self {
            expert_noise: b.expert_noise,
            medium_noise: b.medium_noise,
            medium_random_fraction: b.medium_random_fraction,
            replay_noise_start: b.replay_noise_start,
            replay_noise_end: b.replay_noise_end,
            stitch_noise: b.stitch_noise,
            stitch_start_jitter: b.stitch_start_jitter,
            stitch_max_hops: b.stitch_max_hops,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeSection {
    /// Unset means twice the action dimension.
    pub latent_dim: Option<usize>,
    pub hidden: Vec<usize>,
    pub kl_weight: f64,
    pub decoder_std: f64,
    pub learning_rate: f64,
    pub final_lr_fraction: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Training losses are logged every this many iterations.
    pub log_interval: usize,
}

impl Default for VaeSection {
    fn default() -> Self {
        Self {
            latent_dim: None,
            hidden: vec![64, 64],
            kl_weight: 0.5,
            decoder_std: 0.7,
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            batch_size: 256,
            iterations: 20_000,
            log_interval: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpotSection {
    /// Unset means the task default (0.25 sparse, 0.2 dense).
    pub lambda: Option<f64>,
    /// Unset means the task's default sweep grid.
    pub lambda_grid: Option<Vec<f64>>,
    pub discount: f64,
    pub tau: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_update_freq: usize,
    pub q_norm: bool,
    /// Unset means the task default (0 sparse, 0.1 dense).
    pub actor_dropout: Option<f64>,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Unset means the task default (1e-4 sparse, 3e-4 dense).
    pub actor_lr: Option<f64>,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_interval: usize,
    /// Unset means the task default (20 sparse, 10 dense).
    pub eval_episodes: Option<usize>,
    pub density_samples: usize,
    pub profile_samples: usize,
    pub profile_states: usize,
    pub eval_profile_states: usize,
    /// Per-update records are logged every this many updates.
    pub log_interval: usize,
}

impl Default for SpotSection {
    fn default() -> Self {
        let s = SpotConfig::default();
        Self {
            lambda: None,
            lambda_grid: None,
            discount: s.discount,
            tau: s.tau,
            policy_noise: s.policy_noise,
            noise_clip: s.noise_clip,
            policy_update_freq: s.policy_update_freq,
            q_norm: s.q_norm,
            actor_dropout: None,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            actor_lr: None,
            critic_lr: s.critic_lr,
            batch_size: 128,
            steps: 15_000,
            eval_interval: 2_500,
            eval_episodes: None,
            density_samples: s.density_samples,
            profile_samples: s.profile.samples,
            profile_states: s.profile.states,
            eval_profile_states: s.eval_profile_states,
            log_interval: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcSection {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_episodes: usize,
}

impl Default for BcSection {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            batch_size: 128,
            steps: 7_500,
            eval_episodes: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub steps: usize,
    pub exploration_noise: f64,
    pub eval_interval: usize,
    pub discount: Option<f64>,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let f = FinetuneConfig::default();
        Self {
            steps: 10_000,
            exploration_noise: f.exploration_noise,
            eval_interval: 2_500,
            discount: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub tabular_mdps: usize,
    pub tabular_states: usize,
    pub tabular_actions: usize,
    pub tabular_discount: f64,
    pub eps_grid: Vec<f64>,
    /// Latent draws of the training-time density estimate compared by `l-effect`.
    pub l_values: Vec<usize>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            tabular_mdps: 100,
            tabular_states: 6,
            tabular_actions: 3,
            tabular_discount: 0.9,
            eps_grid: vec![0.0, 0.05, 0.1, 0.2],
            l_values: vec![1, 5, 25, 125],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn env_kind(&self) -> Result<EnvKind, CliError> {
        EnvKind::from_name(&self.env).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn regime_kind(&self) -> Result<Regime, CliError> {
        Regime::from_name(&self.regime).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let kind = self.env_kind()?;
        self.regime_kind()?;
        if self.dataset_size == 0 {
            return Err(CliError::Config("dataset_size must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        self.spot_config(kind, None)?.validate()?;
        for &lambda in self.lambdas(kind).iter() {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(CliError::Config(format!("lambda grid value {lambda} is not a nonnegative number")));
            }
        }
        self.finetune_config().validate()?;
        for (name, v) in [
            ("vae.iterations", self.vae.iterations),
            ("vae.batch_size", self.vae.batch_size),
            ("vae.log_interval", self.vae.log_interval),
            ("spot.log_interval", self.spot.log_interval),
            ("bc.batch_size", self.bc.batch_size),
            ("bc.eval_episodes", self.bc.eval_episodes),
        ] {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.vae.decoder_std > 0.0 && self.vae.kl_weight >= 0.0) {
            return Err(CliError::Config("vae.decoder_std must be positive and vae.kl_weight nonnegative".into()));
        }
        if self.analysis.l_values.contains(&0) {
            return Err(CliError::Config("analysis.l_values must be positive".into()));
        }
        Ok(())
    }

    pub fn normalize(&self, kind: EnvKind) -> bool {
        self.normalize_states
            .unwrap_or(kind.spec().reward_kind == RewardKind::Dense)
    }

    pub fn behavior_config(&self) -> BehaviorConfig {
        let b = &self.behavior;
        BehaviorConfig {
            expert_noise: b.expert_noise,
            medium_noise: b.medium_noise,
            medium_random_fraction: b.medium_random_fraction,
            replay_noise_start: b.replay_noise_start,
            replay_noise_end: b.replay_noise_end,
            stitch_noise: b.stitch_noise,
            stitch_start_jitter: b.stitch_start_jitter,
            stitch_max_hops: b.stitch_max_hops,
        }
    }

    pub fn cvae_config(&self) -> CvaeConfig {
        let v = &self.vae;
        CvaeConfig {
            latent_dim: v.latent_dim,
            hidden: v.hidden.clone(),
            kl_weight: v.kl_weight,
            decoder_std: v.decoder_std,
            learning_rate: v.learning_rate,
            final_lr_fraction: v.final_lr_fraction,
            batch_size: v.batch_size,
            iterations: v.iterations,
        }
    }

    /// SPOT settings for `kind`, with `lambda` overriding the configured weight.
    pub fn spot_config(&self, kind: EnvKind, lambda: Option<f64>) -> Result<SpotConfig, CliError> {
        let base = SpotConfig::for_env(kind);
        let s = &self.spot;
        let config = SpotConfig {
            lambda: lambda.or(s.lambda).unwrap_or(base.lambda),
            discount: s.discount,
            tau: s.tau,
            policy_noise: s.policy_noise,
            noise_clip: s.noise_clip,
            policy_update_freq: s.policy_update_freq,
            q_norm: s.q_norm,
            actor_dropout: s.actor_dropout.unwrap_or(base.actor_dropout),
            actor_hidden: s.actor_hidden.clone(),
            critic_hidden: s.critic_hidden.clone(),
            actor_lr: s.actor_lr.unwrap_or(base.actor_lr),
            critic_lr: s.critic_lr,
            batch_size: s.batch_size,
            steps: s.steps,
            eval_interval: s.eval_interval,
            eval_episodes: s.eval_episodes.unwrap_or(base.eval_episodes),
            density_samples: s.density_samples,
            profile: ProfileConfig {
                samples: s.profile_samples,
                states: s.profile_states,
            },
            eval_profile_states: s.eval_profile_states,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn lambdas(&self, kind: EnvKind) -> Vec<f64> {
        self.spot
            .lambda_grid
            .clone()
            .unwrap_or_else(|| lambda_grid(kind).to_vec())
    }

    pub fn bc_config(&self) -> BcConfig {
        BcConfig {
            hidden: self.bc.hidden.clone(),
            learning_rate: self.bc.learning_rate,
            batch_size: self.bc.batch_size,
            steps: self.bc.steps,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            steps: self.finetune.steps,
            exploration_noise: self.finetune.exploration_noise,
            eval_interval: self.finetune.eval_interval,
            discount: self.finetune.discount,
        }
    }
}
