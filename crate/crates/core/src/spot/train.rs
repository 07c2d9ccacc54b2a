use std::fmt::Write as _;

use rand::Rng;

use super::agent::{SpotAgent, UpdateOutcome, UpdateRngs};
use super::policy::DeterministicPolicy;
use super::profile::profile_over;
use super::{ProfileConfig, SpotConfig};
use crate::cvae::DensityModel;
use crate::data::{OfflineDataset, Transition};
use crate::envs::{evaluate_policy, normalized_score, EnvKind};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Per-update record. Actor fields are present on steps that updated the actor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub critic_loss: f64,
    pub mean_q: f64,
    pub actor_loss: Option<f64>,
    pub mean_log_density: Option<f64>,
    pub lambda: f64,
}

impl StepRecord {
    pub(crate) fn new(step: usize, outcome: &UpdateOutcome, lambda: f64) -> Self {
        Self {
            step,
            critic_loss: outcome.critic_loss,
            mean_q: outcome.mean_q,
            actor_loss: outcome.actor.map(|a| a.loss),
            mean_log_density: outcome.actor.map(|a| a.mean_log_density),
            lambda,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    /// Updates completed when the evaluation ran.
    pub step: usize,
    /// Mean undiscounted environment return (the goal-reach rate on the maze).
    pub mean_return: f64,
    pub normalized_score: f64,
    /// 5th percentile of `log π̂_β(π(s)|s)` over a state subsample.
    pub percentile5_log_density: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainLog {
    pub fn last_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }

    /// One row per evaluation: `step,eval_return,normalized_score,percentile5_logpb`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("step,eval_return,normalized_score,percentile5_logpb\n");
        for e in &self.evals {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                e.step, e.mean_return, e.normalized_score, e.percentile5_log_density
            );
        }
        out
    }
}

/// Returns of `episodes` noise-free rollouts of `policy`.
pub fn evaluate(
    policy: &DeterministicPolicy,
    kind: EnvKind,
    episodes: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    evaluate_policy(kind, episodes, rng, |obs| policy.act(obs))
}

/// Evaluation at `step`: rollouts from the `Evaluation` stream of `seed` (the
/// same start states at every checkpoint) and the density percentile over a
/// subsample of `transitions` drawn from the `Analysis` stream.
pub(crate) fn evaluation_record(
    agent: &SpotAgent,
    kind: EnvKind,
    transitions: &[Transition],
    seed: u64,
    step: usize,
) -> Result<EvalRecord> {
    let config = agent.config();
    let returns = evaluate(agent.actor(), kind, config.eval_episodes, &mut stream(seed, Stream::Evaluation))?;
    let mean_return = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
    let profile = profile_over(
        agent.actor(),
        agent.density(),
        transitions,
        &ProfileConfig {
            samples: config.profile.samples,
            states: config.eval_profile_states,
        },
        &mut stream(seed, Stream::Analysis),
    )?;
    Ok(EvalRecord {
        step,
        mean_return,
        normalized_score: normalized_score(mean_return, kind)?,
        percentile5_log_density: profile.p5,
    })
}

/// Offline training: `config.steps` update cycles on uniform minibatches of
/// `dataset`, with an evaluation after every `eval_interval` updates.
pub fn train_offline(
    dataset: &OfflineDataset,
    density: DensityModel,
    config: &SpotConfig,
    seed: u64,
) -> Result<(SpotAgent, TrainLog)> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let spec = dataset.env.spec();
    let mut agent = SpotAgent::new(&spec, density, dataset.normalization.clone(), config, seed)?;
    let mut batches = stream(seed, Stream::Minibatch);
    let mut rngs = UpdateRngs::new(seed);
    let mut log = TrainLog::default();
    for step in 1..=config.steps {
        let batch = dataset.sample_minibatch(config.batch_size, &mut batches)?;
        let outcome = agent
            .train_step(&batch, &mut rngs)
            .map_err(|e| e.at_iteration(step))?;
        log.steps.push(StepRecord::new(step, &outcome, agent.lambda()));
        if step % config.eval_interval == 0 {
            log.evals.push(evaluation_record(&agent, dataset.env, &dataset.transitions, seed, step)?);
        }
    }
    Ok((agent, log))
}
