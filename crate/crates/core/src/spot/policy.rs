use rand::Rng;

use crate::autodiff::{Activation, BoundMlp, Graph, Mlp, Tensor, Var};
use crate::data::NormalizationStats;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};

/// Deterministic policy: an MLP with a `tanh` output mapped affinely onto the
/// action box. Inputs are states in the dataset's (possibly normalized)
/// space; [`DeterministicPolicy::act`] accepts raw observations.
#[derive(Clone, Debug, PartialEq)]
pub struct DeterministicPolicy {
    net: Mlp,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    observation_stats: Option<NormalizationStats>,
}

impl DeterministicPolicy {
    pub fn new(
        spec: &EnvSpec,
        hidden: &[usize],
        observation_stats: Option<NormalizationStats>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut widths = vec![spec.state_dim];
        widths.extend_from_slice(hidden);
        widths.push(spec.action_dim);
        let net = Mlp::new(&widths, Activation::Relu, Activation::Tanh, rng)?;
        Self::from_parts(net, spec.action_low.clone(), spec.action_high.clone(), observation_stats)
    }

    pub fn from_parts(
        net: Mlp,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        observation_stats: Option<NormalizationStats>,
    ) -> Result<Self> {
        if action_low.len() != net.output_dim() || action_high.len() != net.output_dim() {
            return Err(Error::Dimension(format!(
                "policy outputs {} actions but the bounds have {}",
                net.output_dim(),
                action_low.len()
            )));
        }
        if let Some(stats) = &observation_stats {
            if stats.mean.len() != net.input_dim() || stats.std.len() != net.input_dim() {
                return Err(Error::Dimension(format!(
                    "policy expects {} state dims but the normalization has {}",
                    net.input_dim(),
                    stats.mean.len()
                )));
            }
        }
        Ok(Self {
            net,
            action_low,
            action_high,
            observation_stats,
        })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub(crate) fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn action_low(&self) -> &[f64] {
        &self.action_low
    }

    pub fn action_high(&self) -> &[f64] {
        &self.action_high
    }

    pub fn observation_stats(&self) -> Option<&NormalizationStats> {
        self.observation_stats.as_ref()
    }

    pub fn action_scale(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .collect()
    }

    pub fn action_center(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| 0.5 * (hi + lo))
            .collect()
    }

    /// Graph forward pass from a state variable to actions in bounds.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &BoundMlp,
        states: Var,
        dropout: Option<&[Tensor]>,
    ) -> Result<Var> {
        let squashed = bound.forward(g, states, dropout)?;
        g.affine_cols(squashed, &self.action_scale(), &self.action_center())
    }

    /// Actions for a batch of states already in the policy's input space.
    pub fn actions(&self, states: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.net.bind(&mut g, false)?;
        let s = g.constant(states.clone())?;
        let a = self.forward(&mut g, &bound, s, None)?;
        Ok(g.value(a).clone())
    }

    /// Actions for raw environment observations.
    pub fn act(&self, observations: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if observations.is_empty() {
            return Ok(Vec::new());
        }
        let rows: Vec<Vec<f64>> = match &self.observation_stats {
            Some(stats) => observations.iter().map(|o| stats.apply(o)).collect(),
            None => observations.to_vec(),
        };
        let states = Tensor::from_rows(&rows)?;
        if states.cols() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "policy expects {} observation dims, got {}",
                self.state_dim(),
                states.cols()
            )));
        }
        let actions = self.actions(&states)?;
        Ok((0..actions.rows()).map(|r| actions.row_slice(r).to_vec()).collect())
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut named = self.net.named_tensors(prefix);
        named.push((format!("{prefix}.action_low"), Tensor::row(&self.action_low)));
        named.push((format!("{prefix}.action_high"), Tensor::row(&self.action_high)));
        if let Some(stats) = &self.observation_stats {
            named.push((format!("{prefix}.obs_mean"), Tensor::row(&stats.mean)));
            named.push((format!("{prefix}.obs_std"), Tensor::row(&stats.std)));
        }
        named
    }

    pub fn from_named(tensors: &[(String, Tensor)], prefix: &str) -> Result<Self> {
        use crate::autodiff::checkpoint::find;
        let net = Mlp::from_named(tensors, prefix, Activation::Relu, Activation::Tanh)?;
        let low = find(tensors, &format!("{prefix}.action_low"))?.data().to_vec();
        let high = find(tensors, &format!("{prefix}.action_high"))?.data().to_vec();
        let stats = match (
            find(tensors, &format!("{prefix}.obs_mean")),
            find(tensors, &format!("{prefix}.obs_std")),
        ) {
            (Ok(mean), Ok(std)) => Some(NormalizationStats {
                mean: mean.data().to_vec(),
                std: std.data().to_vec(),
            }),
            (Err(_), Err(_)) => None,
            _ => return Err(Error::Format(format!("incomplete normalization for '{prefix}'"))),
        };
        Self::from_parts(net, low, high, stats)
    }
}
