//! Offline-to-online fine-tuning. The pretrained agent keeps training while
//! it collects its own experience: each environment step adds one transition
//! to a replay buffer seeded with the offline data and runs one update cycle.
//! The regularization weight decays linearly to a fifth of its initial value
//! over the first 80% of the run and is held there afterwards. The density
//! model and the observation normalization stay frozen.

mod buffer;

pub use buffer::ReplayBuffer;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cvae::{DensityModel, GaussianDensity};
use crate::data::{NormalizationStats, OfflineDataset, Transition};
use crate::envs::{EnvKind, RewardKind};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::spot::{evaluation_record, SpotAgent, SpotConfig, StepRecord, TrainLog, UpdateRngs};

/// Linear decay of the regularization weight with a floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecaySchedule {
    pub initial: f64,
    pub total_steps: usize,
    /// Fraction of `initial` where the decay stops.
    pub floor_fraction: f64,
}

impl DecaySchedule {
    pub const FLOOR_FRACTION: f64 = 0.2;

    pub fn new(initial: f64, total_steps: usize) -> Self {
        Self {
            initial,
            total_steps,
            floor_fraction: Self::FLOOR_FRACTION,
        }
    }

    /// Step at which the floor is reached.
    pub fn knee(&self) -> f64 {
        (1.0 - self.floor_fraction) * self.total_steps as f64
    }

    /// `initial · max(floor, 1 − t/T)`.
    pub fn lambda_at(&self, t: usize) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::Config(format!(
                "decay schedule queried at step {t} beyond its {} steps",
                self.total_steps
            )));
        }
        if self.total_steps == 0 {
            return Ok(self.initial);
        }
        let progress = t as f64 / self.total_steps as f64;
        Ok(self.initial * (1.0 - progress).max(self.floor_fraction))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    /// Online environment steps, each followed by one update cycle.
    pub steps: usize,
    /// Standard deviation of the Gaussian exploration noise relative to the
    /// action half-range.
    pub exploration_noise: f64,
    pub eval_interval: usize,
    /// Replaces the agent's discount for the online phase when set.
    pub discount: Option<f64>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            exploration_noise: 0.1,
            eval_interval: 5_000,
            discount: None,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.exploration_noise >= 0.0 && self.exploration_noise.is_finite()) {
            return Err(Error::Config(format!(
                "exploration noise must be nonnegative, got {}",
                self.exploration_noise
            )));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be positive".into()));
        }
        Ok(())
    }
}

/// Continues training `agent` online in the dataset's environment, starting
/// from a replay buffer holding the dataset. Evaluations use the same seeded
/// start states as offline training, so returns are directly comparable.
pub fn finetune(
    mut agent: SpotAgent,
    dataset: &OfflineDataset,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<(SpotAgent, TrainLog)> {
    config.validate()?;
    let spec = dataset.env.spec();
    if agent.actor().state_dim() != spec.state_dim || agent.actor().action_dim() != spec.action_dim {
        return Err(Error::Dimension(format!(
            "agent is {}→{} but {} is {}→{}",
            agent.actor().state_dim(),
            agent.actor().action_dim(),
            dataset.env,
            spec.state_dim,
            spec.action_dim
        )));
    }
    if let Some(discount) = config.discount {
        agent.set_discount(discount)?;
    }
    let schedule = DecaySchedule::new(agent.lambda(), config.steps);
    let buffer = ReplayBuffer::from_dataset(dataset, config.steps)?;
    let online = Online {
        kind: dataset.env,
        normalization: dataset.normalization.as_ref(),
        reward_shift: dataset.reward_shifted,
        schedule: Some(schedule),
    };
    online.run(agent, buffer, config, seed)
}

/// Online TD3 from randomly initialized networks and an empty buffer, with
/// the regularizer switched off and everything else as in [`finetune`].
pub fn from_scratch_baseline(
    kind: EnvKind,
    spot: &SpotConfig,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<(SpotAgent, TrainLog)> {
    config.validate()?;
    let spec = kind.spec();
    let placeholder = GaussianDensity::new(
        spec.state_dim,
        &spec.action_low,
        &spec.action_high,
        &[8],
        &mut stream(seed, Stream::Init),
    )?;
    let spot = SpotConfig {
        lambda: 0.0,
        discount: config.discount.unwrap_or(spot.discount),
        ..spot.clone()
    };
    let agent = SpotAgent::new(&spec, DensityModel::Gaussian(placeholder), None, &spot, seed)?;
    let online = Online {
        kind,
        normalization: None,
        reward_shift: spec.reward_kind == RewardKind::Sparse,
        schedule: None,
    };
    online.run(agent, ReplayBuffer::new(config.steps.max(1))?, config, seed)
}

struct Online<'a> {
    kind: EnvKind,
    normalization: Option<&'a NormalizationStats>,
    reward_shift: bool,
    schedule: Option<DecaySchedule>,
}

impl Online<'_> {
    fn normalize(&self, observation: &[f64]) -> Vec<f64> {
        match self.normalization {
            Some(stats) => stats.apply(observation),
            None => observation.to_vec(),
        }
    }

    fn run(
        &self,
        mut agent: SpotAgent,
        mut buffer: ReplayBuffer,
        config: &FinetuneConfig,
        seed: u64,
    ) -> Result<(SpotAgent, TrainLog)> {
        let spec = self.kind.spec();
        let scale = spec.action_scale();
        let mut resets = stream(seed, Stream::Episode);
        let mut exploration = stream(seed, Stream::Exploration);
        let mut batches = stream(seed, Stream::Minibatch);
        let mut rngs = UpdateRngs::new(seed);
        let batch_size = agent.config().batch_size;
        let mut log = TrainLog::default();

        let mut env = self.kind.make();
        let mut observation = env.reset(&mut resets);
        for t in 0..config.steps {
            if let Some(schedule) = &self.schedule {
                agent.set_lambda(schedule.lambda_at(t)?)?;
            }
            let greedy = agent.actor().act(std::slice::from_ref(&observation))?.remove(0);
            let noisy: Vec<f64> = greedy
                .iter()
                .zip(&scale)
                .map(|(a, s)| a + config.exploration_noise * s * exploration.sample::<f64, _>(StandardNormal))
                .collect();
            let action = spec.clip_action(&noisy);
            let step = env.step(&action)?;
            buffer.push(Transition {
                state: self.normalize(&observation),
                action,
                reward: if self.reward_shift { step.reward - 1.0 } else { step.reward },
                next_state: self.normalize(&step.observation),
                terminal: step.terminal,
            });
            observation = if step.done() {
                env.reset(&mut resets)
            } else {
                step.observation
            };

            let updates = t + 1;
            let batch = buffer.sample(batch_size, &mut batches)?;
            let outcome = agent
                .train_step(&batch, &mut rngs)
                .map_err(|e| e.at_iteration(updates))?;
            log.steps.push(StepRecord::new(updates, &outcome, agent.lambda()));
            if updates % config.eval_interval == 0 {
                log.evals
                    .push(evaluation_record(&agent, self.kind, buffer.as_slice(), seed, updates)?);
            }
        }
        Ok((agent, log))
    }
}
