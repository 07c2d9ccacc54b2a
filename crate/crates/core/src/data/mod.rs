//! Offline datasets: scripted behavior policies, state normalization, a
//! binary file format, and uniform minibatch sampling.

mod generate;
mod io;

use rand::Rng;

pub use generate::{generate, generate_with, BehaviorConfig};
pub use io::{load, read_dataset, save, write_dataset, DATASET_VERSION};

use crate::autodiff::Tensor;
use crate::envs::EnvKind;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    Expert,
    Medium,
    MediumReplay,
    MediumExpert,
    Stitch,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::Expert,
        Regime::Medium,
        Regime::MediumReplay,
        Regime::MediumExpert,
        Regime::Stitch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Expert => "expert",
            Regime::Medium => "medium",
            Regime::MediumReplay => "medium_replay",
            Regime::MediumExpert => "medium_expert",
            Regime::Stitch => "stitch",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown regime '{name}'")))
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// The episode ended because the task ended, not because time ran out.
    pub terminal: bool,
}

/// Per-dimension affine map `x -> (x - mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Stats of the composite map `other ∘ self`.
    fn then(&self, other: &NormalizationStats) -> NormalizationStats {
        NormalizationStats {
            mean: self
                .mean
                .iter()
                .zip(&self.std)
                .zip(&other.mean)
                .map(|((m0, s0), m1)| m0 + s0 * m1)
                .collect(),
            std: self.std.iter().zip(&other.std).map(|(a, b)| a * b).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub env: EnvKind,
    pub regime: Regime,
    pub transitions: Vec<Transition>,
    /// Lengths of the consecutive trajectories making up `transitions`.
    pub episode_lengths: Vec<usize>,
    /// Sparse rewards were shifted by −1 when the data was generated.
    pub reward_shifted: bool,
    /// Present once states have been normalized; maps raw observations to
    /// the stored state space.
    pub normalization: Option<NormalizationStats>,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.env.spec().state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.env.spec().action_dim
    }

    /// Slices of consecutive transitions, one per trajectory.
    pub fn episodes(&self) -> impl Iterator<Item = &[Transition]> {
        let mut start = 0;
        self.episode_lengths.iter().map(move |&len| {
            let ep = &self.transitions[start..start + len];
            start += len;
            ep
        })
    }

    /// Maps a raw environment observation into the dataset's state space.
    pub fn normalize_observation(&self, observation: &[f64]) -> Vec<f64> {
        match &self.normalization {
            Some(stats) => stats.apply(observation),
            None => observation.to_vec(),
        }
    }

    /// Reward as the environment reports it, undoing the training shift.
    pub fn environment_reward(&self, stored: f64) -> f64 {
        if self.reward_shifted {
            stored + 1.0
        } else {
            stored
        }
    }

    /// Uniform with-replacement minibatch.
    pub fn sample_minibatch(&self, n: usize, rng: &mut impl Rng) -> Result<Batch> {
        let idx = sample_indices(self.len(), n, rng)?;
        Batch::from_transitions(idx.iter().map(|&i| &self.transitions[i]))
    }
}

/// `n` indices drawn uniformly with replacement from `0..len`.
pub fn sample_indices(len: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Config("minibatch size must be positive".into()));
    }
    if len == 0 {
        return Err(Error::Config("cannot sample from an empty dataset".into()));
    }
    Ok((0..n).map(|_| rng.random_range(0..len)).collect())
}

/// Column-stacked minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    /// `[n, 1]`.
    pub rewards: Tensor,
    pub next_states: Tensor,
    /// `[n, 1]`, `0` where the transition was terminal.
    pub not_done: Tensor,
}

impl Batch {
    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition>) -> Result<Self> {
        let items: Vec<&Transition> = items.into_iter().collect();
        let n = items.len();
        let rows = |f: &dyn Fn(&Transition) -> &[f64]| {
            Tensor::from_rows(&items.iter().map(|t| f(t)).collect::<Vec<_>>())
        };
        Ok(Self {
            states: rows(&|t| &t.state)?,
            actions: rows(&|t| &t.action)?,
            next_states: rows(&|t| &t.next_state)?,
            rewards: Tensor::matrix(n, 1, items.iter().map(|t| t.reward).collect())?,
            not_done: Tensor::matrix(
                n,
                1,
                items.iter().map(|t| if t.terminal { 0.0 } else { 1.0 }).collect(),
            )?,
        })
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-dimension mean and population standard deviation of `states`, with the
/// deviation floored at [`STD_FLOOR`].
pub fn state_statistics(states: &[&[f64]]) -> Result<NormalizationStats> {
    let Some(first) = states.first() else {
        return Err(Error::Config("cannot normalize an empty dataset".into()));
    };
    let dim = first.len();
    let n = states.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in states {
        for (m, v) in mean.iter_mut().zip(s.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in states {
        for ((acc, v), m) in var.iter_mut().zip(s.iter()).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    Ok(NormalizationStats { mean, std })
}

/// Standardizes `state` and `next_state` of every transition with statistics
/// of the current states. Stats already present are composed with the new
/// ones so that [`OfflineDataset::normalize_observation`] keeps mapping raw
/// observations correctly.
pub fn normalize_states(dataset: &OfflineDataset) -> Result<OfflineDataset> {
    let states: Vec<&[f64]> = dataset.transitions.iter().map(|t| t.state.as_slice()).collect();
    let stats = state_statistics(&states)?;
    let transitions = dataset
        .transitions
        .iter()
        .map(|t| Transition {
            state: stats.apply(&t.state),
            next_state: stats.apply(&t.next_state),
            ..t.clone()
        })
        .collect();
    let normalization = match &dataset.normalization {
        Some(previous) => previous.then(&stats),
        None => stats,
    };
    Ok(OfflineDataset {
        transitions,
        normalization: Some(normalization),
        ..dataset.clone()
    })
}
