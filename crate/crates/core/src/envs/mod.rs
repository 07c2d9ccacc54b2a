//! Deterministic toy control tasks: a sparse-reward point maze that requires
//! stitching and a dense-reward pendulum swing-up.

mod pendulum;
mod pointmaze;
mod score;

use rand::Rng;

pub use pendulum::{pendulum_step, wrap_angle, Pendulum, PendulumState};
pub use pointmaze::{
    at_goal, distance, is_free, pointmaze_step, steer_towards, PointMaze, GOAL, GOAL_RADIUS,
    MAZE_SIZE, START, STITCH_WAYPOINTS,
};
pub use score::{
    calibrate_reference_returns, normalized_score, reference_returns, ReferenceReturns,
};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RewardKind {
    Dense,
    Sparse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvKind {
    PointMaze,
    Pendulum,
}

impl EnvKind {
    pub const ALL: [EnvKind; 2] = [EnvKind::PointMaze, EnvKind::Pendulum];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointMaze => "pointmaze",
            EnvKind::Pendulum => "pendulum",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown environment '{name}'")))
    }

    pub fn spec(self) -> EnvSpec {
        match self {
            EnvKind::PointMaze => EnvSpec {
                kind: self,
                state_dim: 2,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                max_episode_steps: 300,
                reward_kind: RewardKind::Sparse,
            },
            EnvKind::Pendulum => EnvSpec {
                kind: self,
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-2.0],
                action_high: vec![2.0],
                max_episode_steps: 200,
                reward_kind: RewardKind::Dense,
            },
        }
    }

    pub fn make(self) -> Env {
        match self {
            EnvKind::PointMaze => Env::PointMaze(PointMaze::new()),
            EnvKind::Pendulum => Env::Pendulum(Pendulum::new()),
        }
    }

    /// Noise-free scripted controller used for data generation and as the
    /// expert reference.
    pub fn scripted_action(self, observation: &[f64]) -> Vec<f64> {
        match self {
            EnvKind::PointMaze => pointmaze::scripted_action(observation).to_vec(),
            EnvKind::Pendulum => vec![pendulum::swing_up_action(observation)],
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
    pub reward_kind: RewardKind,
}

impl EnvSpec {
    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
            .collect()
    }

    /// Half-width of the action box per dimension.
    pub fn action_scale(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .collect()
    }

    /// Center of the action box per dimension.
    pub fn action_center(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| 0.5 * (hi + lo))
            .collect()
    }
}

/// Outcome of a single environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// The task itself ended (goal reached); bootstrapping stops here.
    pub terminal: bool,
    /// The step budget ran out.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// A live episode of either task.
#[derive(Clone, Debug, PartialEq)]
pub enum Env {
    PointMaze(PointMaze),
    Pendulum(Pendulum),
}

impl Env {
    pub fn kind(&self) -> EnvKind {
        match self {
            Env::PointMaze(_) => EnvKind::PointMaze,
            Env::Pendulum(_) => EnvKind::Pendulum,
        }
    }

    pub fn spec(&self) -> EnvSpec {
        self.kind().spec()
    }

    pub fn reset(&mut self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Env::PointMaze(e) => e.reset(rng),
            Env::Pendulum(e) => e.reset(rng),
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        match self {
            Env::PointMaze(e) => e.observation(),
            Env::Pendulum(e) => e.observation(),
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            Env::PointMaze(e) => e.steps(),
            Env::Pendulum(e) => e.steps(),
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            Env::PointMaze(e) => e.is_done(),
            Env::Pendulum(e) => e.is_done(),
        }
    }

    /// Advances one step. Out-of-range actions are clipped, never rejected.
    pub fn step(&mut self, action: &[f64]) -> Result<Step> {
        let spec = self.spec();
        if action.len() != spec.action_dim {
            return Err(Error::Dimension(format!(
                "{} expects {} action dims, got {}",
                spec.kind,
                spec.action_dim,
                action.len()
            )));
        }
        let action = spec.clip_action(action);
        match self {
            Env::PointMaze(e) => e.step(&action),
            Env::Pendulum(e) => e.step(&action),
        }
    }
}

/// Runs `episodes` episodes in lockstep, querying `policy` once per step with
/// the observations of all still-running episodes. Returns the per-episode
/// undiscounted returns of the unshifted environment reward.
pub fn evaluate_policy(
    kind: EnvKind,
    episodes: usize,
    rng: &mut impl Rng,
    mut policy: impl FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
) -> Result<Vec<f64>> {
    let mut envs: Vec<Env> = (0..episodes).map(|_| kind.make()).collect();
    let mut observations: Vec<Vec<f64>> = envs.iter_mut().map(|e| e.reset(rng)).collect();
    let mut returns = vec![0.0; episodes];
    loop {
        let live: Vec<usize> = (0..episodes).filter(|&i| !envs[i].is_done()).collect();
        if live.is_empty() {
            return Ok(returns);
        }
        let batch: Vec<Vec<f64>> = live.iter().map(|&i| observations[i].clone()).collect();
        let actions = policy(&batch)?;
        if actions.len() != live.len() {
            return Err(Error::Dimension(format!(
                "policy returned {} actions for {} observations",
                actions.len(),
                live.len()
            )));
        }
        for (&i, action) in live.iter().zip(&actions) {
            let step = envs[i].step(action)?;
            returns[i] += step.reward;
            observations[i] = step.observation;
        }
    }
}
