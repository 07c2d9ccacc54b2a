use rand::Rng;

use super::policy::DeterministicPolicy;
use super::ProfileConfig;
use crate::autodiff::Tensor;
use crate::cvae::DensityModel;
use crate::data::{OfflineDataset, Transition};
use crate::error::{Error, Result};

/// Nearest-rank percentiles of estimated `log π̂_β(a|s)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintProfile {
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
}

/// Nearest-rank percentile: the `⌈p/100 · n⌉`-th smallest value.
pub fn nearest_rank(sorted: &[f64], percent: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Config("percentile of an empty sample".into()));
    }
    let rank = ((percent / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Percentiles of the importance-weighted estimate at the given pairs.
pub fn density_profile(
    density: &DensityModel,
    states: &Tensor,
    actions: &Tensor,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<ConstraintProfile> {
    if states.rows() == 0 {
        return Err(Error::Config("density profile over an empty state set".into()));
    }
    let mut values = density.log_density(states, actions, samples, rng)?;
    values.sort_by(f64::total_cmp);
    Ok(ConstraintProfile {
        p5: nearest_rank(&values, 5.0)?,
        p25: nearest_rank(&values, 25.0)?,
        p50: nearest_rank(&values, 50.0)?,
    })
}

/// Profile of `log π̂_β(π(s)|s)` over a uniform subsample (without
/// replacement) of the dataset's states.
pub fn constraint_strength_profile(
    policy: &DeterministicPolicy,
    density: &DensityModel,
    dataset: &OfflineDataset,
    config: &ProfileConfig,
    rng: &mut impl Rng,
) -> Result<ConstraintProfile> {
    profile_over(policy, density, &dataset.transitions, config, rng)
}

pub(crate) fn profile_over(
    policy: &DeterministicPolicy,
    density: &DensityModel,
    transitions: &[Transition],
    config: &ProfileConfig,
    rng: &mut impl Rng,
) -> Result<ConstraintProfile> {
    let n = config.states.min(transitions.len());
    if n == 0 {
        return Err(Error::Config("constraint profile over an empty state subsample".into()));
    }
    let picks = rand::seq::index::sample(rng, transitions.len(), n);
    let rows: Vec<&[f64]> = picks.iter().map(|i| transitions[i].state.as_slice()).collect();
    let states = Tensor::from_rows(&rows)?;
    let actions = policy.actions(&states)?;
    density_profile(density, &states, &actions, config.samples, rng)
}
