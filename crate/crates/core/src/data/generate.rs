//! Behavior policies standing in for the dataset regimes of standard offline
//! benchmarks. Every regime perturbs the scripted controller:
//!
//! * `expert`: Gaussian action noise with σ = `expert_noise`.
//! * `medium`: σ = `medium_noise`, plus a `medium_random_fraction` chance of
//!   a uniformly random action.
//! * `medium_replay`: σ annealed linearly from `replay_noise_start` to
//!   `replay_noise_end` over the dataset, emulating a training run's buffer.
//! * `medium_expert`: the first half expert, the second half medium.
//! * `stitch` (maze only): short segments between nearby corridor waypoints.
//!   No segment connects the start region to the goal region, so solving the
//!   task requires composing several of them.
//!
//! Noise standard deviations are relative to the action half-range.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{OfflineDataset, Regime, Transition};
use crate::envs::{
    at_goal, distance, is_free, steer_towards, EnvKind, EnvSpec, PointMaze, RewardKind, START,
    STITCH_WAYPOINTS,
};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorConfig {
    pub expert_noise: f64,
    pub medium_noise: f64,
    pub medium_random_fraction: f64,
    pub replay_noise_start: f64,
    pub replay_noise_end: f64,
    pub stitch_noise: f64,
    /// Jitter of a stitch segment's start around its waypoint, per axis.
    pub stitch_start_jitter: f64,
    /// A stitch segment heads at most this many waypoints away.
    pub stitch_max_hops: usize,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            expert_noise: 0.1,
            medium_noise: 0.3,
            medium_random_fraction: 0.2,
            replay_noise_start: 1.0,
            replay_noise_end: 0.3,
            stitch_noise: 0.1,
            stitch_start_jitter: 0.3,
            stitch_max_hops: 2,
        }
    }
}

const WAYPOINT_REACHED: f64 = 0.15;
const MAX_SEGMENT_STEPS: usize = 100;

pub fn generate(env: EnvKind, regime: Regime, size: usize, seed: u64) -> Result<OfflineDataset> {
    generate_with(env, regime, size, seed, &BehaviorConfig::default())
}

pub fn generate_with(
    env: EnvKind,
    regime: Regime,
    size: usize,
    seed: u64,
    config: &BehaviorConfig,
) -> Result<OfflineDataset> {
    if size == 0 {
        return Err(Error::Config("dataset size must be positive".into()));
    }
    let mut gen = Generator {
        spec: env.spec(),
        resets: stream(seed, Stream::Reset),
        noise: stream(seed, Stream::BehaviorNoise),
        episodes: stream(seed, Stream::Episode),
        transitions: Vec::with_capacity(size),
        lengths: Vec::new(),
    };
    match regime {
        Regime::Expert => gen.rollouts(size, |_| (config.expert_noise, 0.0)),
        Regime::Medium => gen.rollouts(size, |_| {
            (config.medium_noise, config.medium_random_fraction)
        }),
        Regime::MediumReplay => gen.rollouts(size, |progress| {
            let sigma = config.replay_noise_start
                + (config.replay_noise_end - config.replay_noise_start) * progress;
            (sigma, 0.0)
        }),
        Regime::MediumExpert => {
            let half = size / 2;
            gen.rollouts(half, |_| (config.expert_noise, 0.0))?;
            gen.rollouts(size, |_| {
                (config.medium_noise, config.medium_random_fraction)
            })
        }
        Regime::Stitch => {
            if env != EnvKind::PointMaze {
                return Err(Error::Config(format!(
                    "the stitch regime needs the pointmaze environment, not {env}"
                )));
            }
            gen.stitch_segments(size, config)
        }
    }?;

    let reward_shifted = gen.spec.reward_kind == RewardKind::Sparse;
    if reward_shifted {
        gen.transitions.iter_mut().for_each(|t| t.reward -= 1.0);
    }
    Ok(OfflineDataset {
        env,
        regime,
        transitions: gen.transitions,
        episode_lengths: gen.lengths,
        reward_shifted,
        normalization: None,
    })
}

struct Generator<R: Rng> {
    spec: EnvSpec,
    resets: R,
    noise: R,
    episodes: R,
    transitions: Vec<Transition>,
    lengths: Vec<usize>,
}

impl<R: Rng> Generator<R> {
    fn perturb(&mut self, base: &[f64], sigma: f64, random_fraction: f64) -> Vec<f64> {
        let spec = &self.spec;
        if random_fraction > 0.0 && self.noise.random::<f64>() < random_fraction {
            return spec
                .action_low
                .iter()
                .zip(&spec.action_high)
                .map(|(&lo, &hi)| self.noise.random_range(lo..=hi))
                .collect();
        }
        let noisy: Vec<f64> = base
            .iter()
            .zip(spec.action_scale())
            .map(|(&a, scale)| {
                let z: f64 = self.noise.sample(StandardNormal);
                a + sigma * scale * z
            })
            .collect();
        spec.clip_action(&noisy)
    }

    /// Full episodes of the noisy scripted controller until `target`
    /// transitions exist; the last episode is cut short if needed.
    /// `schedule(progress)` yields `(σ, random_fraction)`.
    fn rollouts(&mut self, target: usize, schedule: impl Fn(f64) -> (f64, f64)) -> Result<()> {
        let kind = self.spec.kind;
        let total = target.max(1) as f64;
        while self.transitions.len() < target {
            let mut env = kind.make();
            let mut obs = env.reset(&mut self.resets);
            let mut len = 0;
            while !env.is_done() && self.transitions.len() < target {
                let (sigma, random_fraction) = schedule(self.transitions.len() as f64 / total);
                let action = self.perturb(&kind.scripted_action(&obs), sigma, random_fraction);
                let step = env.step(&action)?;
                self.transitions.push(Transition {
                    state: obs,
                    action,
                    reward: step.reward,
                    next_state: step.observation.clone(),
                    terminal: step.terminal,
                });
                obs = step.observation;
                len += 1;
            }
            self.lengths.push(len);
        }
        Ok(())
    }

    fn stitch_segments(&mut self, target: usize, config: &BehaviorConfig) -> Result<()> {
        let last = STITCH_WAYPOINTS.len() - 1;
        let hops = config.stitch_max_hops.max(1);
        while self.transitions.len() < target {
            let from = self.episodes.random_range(0..last);
            let candidates: Vec<usize> = (from.saturating_sub(hops)..=(from + hops).min(last))
                .filter(|&j| j != from)
                .collect();
            let to = candidates[self.episodes.random_range(0..candidates.len())];
            let start = loop {
                let jitter = config.stitch_start_jitter;
                let p = [
                    STITCH_WAYPOINTS[from][0] + self.episodes.random_range(-jitter..=jitter),
                    STITCH_WAYPOINTS[from][1] + self.episodes.random_range(-jitter..=jitter),
                ];
                if is_free(p) {
                    break p;
                }
            };

            let segment = self.stitch_segment(start, from, to, config.stitch_noise)?;
            let touches_start = segment.iter().any(|t| near_start(&t.state) || near_start(&t.next_state));
            let touches_goal = segment.iter().any(|t| reached(&t.state) || reached(&t.next_state));
            if touches_start && touches_goal {
                continue;
            }
            let room = target - self.transitions.len();
            let len = segment.len().min(room);
            self.transitions.extend(segment.into_iter().take(len));
            self.lengths.push(len);
        }
        Ok(())
    }

    fn stitch_segment(
        &mut self,
        start: [f64; 2],
        from: usize,
        to: usize,
        sigma: f64,
    ) -> Result<Vec<Transition>> {
        let forward = to > from;
        let mut next_waypoint = if forward { from + 1 } else { from - 1 };
        let mut env = PointMaze::at(start);
        let mut segment = Vec::new();
        while segment.len() < MAX_SEGMENT_STEPS {
            let pos = env.position();
            let waypoint = STITCH_WAYPOINTS[next_waypoint];
            if distance(pos, waypoint) < WAYPOINT_REACHED {
                if next_waypoint == to {
                    break;
                }
                next_waypoint = if forward { next_waypoint + 1 } else { next_waypoint - 1 };
                continue;
            }
            let action = self.perturb(&steer_towards(pos, waypoint), sigma, 0.0);
            let step = env.step(&action)?;
            segment.push(Transition {
                state: pos.to_vec(),
                action,
                reward: step.reward,
                next_state: step.observation,
                terminal: step.terminal,
            });
            if step.terminal {
                break;
            }
        }
        Ok(segment)
    }
}

fn near_start(state: &[f64]) -> bool {
    distance([state[0], state[1]], START) <= 0.5
}

fn reached(state: &[f64]) -> bool {
    at_goal([state[0], state[1]])
}
