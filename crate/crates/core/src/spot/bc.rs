use super::policy::DeterministicPolicy;
use crate::autodiff::{Adam, AdamConfig, Graph, Tensor};
use crate::data::OfflineDataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct BcConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            learning_rate: 1e-3,
            batch_size: 256,
            steps: 20_000,
        }
    }
}

/// Behavior cloning: regress dataset actions on states by mean squared error.
/// The returned policy carries the dataset's normalization, so it acts on raw
/// observations.
pub fn bc_baseline(dataset: &OfflineDataset, config: &BcConfig, seed: u64) -> Result<DeterministicPolicy> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot clone an empty dataset".into()));
    }
    let spec = dataset.env.spec();
    let mut policy = DeterministicPolicy::new(
        &spec,
        &config.hidden,
        dataset.normalization.clone(),
        &mut stream(seed, Stream::Init),
    )?;
    let mut optimizer = Adam::new(
        AdamConfig::with_lr(config.learning_rate),
        policy.network().parameters(),
    );
    let mut batches = stream(seed, Stream::Minibatch);
    for step in 0..config.steps {
        let batch = dataset.sample_minibatch(config.batch_size, &mut batches)?;
        let grads = bc_gradients(&policy, &batch.states, &batch.actions).map_err(|e| e.at_iteration(step))?;
        let mut params = policy.network_mut().parameters_mut();
        optimizer.step(&mut params, &grads).map_err(|e| e.at_iteration(step))?;
    }
    Ok(policy)
}

fn bc_gradients(policy: &DeterministicPolicy, states: &Tensor, actions: &Tensor) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let bound = policy.network().bind(&mut g, true)?;
    let s = g.constant(states.clone())?;
    let target = g.constant(actions.clone())?;
    let predicted = policy.forward(&mut g, &bound, s, None)?;
    let diff = g.sub(predicted, target)?;
    let sq = g.square(diff)?;
    let loss = g.mean(sq)?;
    g.backward(loss)?;
    Ok(bound.params().iter().map(|&p| g.grad(p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_with, BehaviorConfig, Regime};
    use crate::envs::EnvKind;

    fn noiseless_expert(size: usize, seed: u64) -> OfflineDataset {
        let behavior = BehaviorConfig {
            expert_noise: 0.0,
            ..BehaviorConfig::default()
        };
        generate_with(EnvKind::PointMaze, Regime::Expert, size, seed, &behavior).unwrap()
    }

    fn quick() -> BcConfig {
        BcConfig {
            hidden: vec![64, 64],
            steps: 15_000,
            ..BcConfig::default()
        }
    }

    #[test]
    fn clones_noiseless_expert_actions() {
        let train = noiseless_expert(5000, 0);
        let held_out = noiseless_expert(1000, 1);
        let policy = bc_baseline(&train, &quick(), 0).unwrap();
        let states: Vec<&[f64]> = held_out.transitions.iter().map(|t| t.state.as_slice()).collect();
        let predicted = policy.actions(&Tensor::from_rows(&states).unwrap()).unwrap();
        let mse = held_out
            .transitions
            .iter()
            .enumerate()
            .flat_map(|(i, t)| t.action.iter().enumerate().map(move |(j, &a)| (i, j, a)))
            .map(|(i, j, a)| (predicted.get(i, j) - a).powi(2))
            .sum::<f64>()
            / predicted.len() as f64;
        assert!(mse < 1e-3, "held-out mse {mse}");
    }

    #[test]
    fn same_seed_gives_same_policy() {
        let data = noiseless_expert(500, 0);
        let config = BcConfig {
            steps: 50,
            hidden: vec![16],
            ..BcConfig::default()
        };
        assert_eq!(bc_baseline(&data, &config, 4).unwrap(), bc_baseline(&data, &config, 4).unwrap());
    }
}
