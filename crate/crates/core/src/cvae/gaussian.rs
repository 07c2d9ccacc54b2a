//! Unimodal alternative to the CVAE: a state-conditional diagonal Gaussian
//! over pre-squash actions, pushed through `tanh` into the action box, fit by
//! maximum likelihood.

use super::train::gather;
use crate::autodiff::{checkpoint, Activation, Adam, AdamConfig, BoundMlp, Graph, Mlp, Tensor, Var};
use crate::data::{sample_indices, OfflineDataset};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;
/// Normalized actions are kept this far inside `(-1, 1)` before `atanh`.
const EDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDensityConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
}

impl Default for GaussianDensityConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            batch_size: 256,
            iterations: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDensity {
    net: Mlp,
    state_dim: usize,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

pub struct BoundGaussian<'m> {
    model: &'m GaussianDensity,
    net: BoundMlp,
}

impl GaussianDensity {
    pub fn new(
        state_dim: usize,
        action_low: &[f64],
        action_high: &[f64],
        hidden: &[usize],
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        let mut widths = vec![state_dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * action_low.len());
        Ok(Self {
            net: Mlp::new(&widths, Activation::Relu, Activation::Identity, rng)?,
            state_dim,
            action_low: action_low.to_vec(),
            action_high: action_high.to_vec(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundGaussian<'_>> {
        Ok(BoundGaussian {
            model: self,
            net: self.net.bind(g, trainable)?,
        })
    }

    pub fn log_density(&self, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false)?;
        let s = g.constant(states.clone())?;
        let a = g.constant(actions.clone())?;
        let d = bound.log_density(&mut g, s, a)?;
        Ok(g.value(d).data().to_vec())
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut named = self.net.named_tensors("gaussian");
        named.push(("gaussian.action_low".into(), Tensor::row(&self.action_low)));
        named.push(("gaussian.action_high".into(), Tensor::row(&self.action_high)));
        named
    }

    pub fn from_named(tensors: &[(String, Tensor)]) -> Result<Self> {
        let net = Mlp::from_named(tensors, "gaussian", Activation::Relu, Activation::Identity)?;
        let action_low = checkpoint::find(tensors, "gaussian.action_low")?.data().to_vec();
        let action_high = checkpoint::find(tensors, "gaussian.action_high")?.data().to_vec();
        if net.output_dim() != 2 * action_low.len() || action_high.len() != action_low.len() {
            return Err(Error::Dimension("Gaussian density output disagrees with bounds".into()));
        }
        Ok(Self {
            state_dim: net.input_dim(),
            net,
            action_low,
            action_high,
        })
    }
}

impl BoundGaussian<'_> {
    /// Per-row `log p(a|s)` including the `tanh` change of variables, `[rows, 1]`.
    pub fn log_density(&self, g: &mut Graph, states: Var, actions: Var) -> Result<Var> {
        let m = self.model;
        let dim = m.action_dim();
        let out = self.net.forward(g, states, None)?;
        let mean = g.slice_cols(out, 0, dim)?;
        let log_std = g.slice_cols(out, dim, 2 * dim)?;
        let log_std = g.clip_all(log_std, LOG_STD_MIN, LOG_STD_MAX)?;
        let log_var = g.scale(log_std, 2.0)?;

        let half: Vec<f64> = m.action_low.iter().zip(&m.action_high).map(|(l, h)| 0.5 * (h - l)).collect();
        let center: Vec<f64> = m.action_low.iter().zip(&m.action_high).map(|(l, h)| 0.5 * (h + l)).collect();
        let inv: Vec<f64> = half.iter().map(|h| 1.0 / h).collect();
        let shift: Vec<f64> = center.iter().zip(&half).map(|(c, h)| -c / h).collect();
        let unit = g.affine_cols(actions, &inv, &shift)?;
        let unit = g.clip_all(unit, -1.0 + EDGE, 1.0 - EDGE)?;
        let pre = g.atanh(unit)?;
        let base = g.gaussian_log_density(pre, mean, log_var)?;
        // log |d a / d pre| = log(half) + log(1 − unit²).
        let sq = g.square(unit)?;
        let one_minus = g.scale(sq, -1.0)?;
        let one_minus = g.offset(one_minus, 1.0)?;
        let log_jac = g.log(one_minus)?;
        let log_half: Vec<f64> = half.iter().map(|h| h.ln()).collect();
        let log_jac = g.affine_cols(log_jac, &vec![1.0; dim], &log_half)?;
        let per_dim = g.sub(base, log_jac)?;
        g.sum_cols(per_dim)
    }
}

pub fn train_gaussian_density(
    dataset: &OfflineDataset,
    config: &GaussianDensityConfig,
    seed: u64,
) -> Result<GaussianDensity> {
    let spec = dataset.env.spec();
    let states: Vec<&[f64]> = dataset.transitions.iter().map(|t| t.state.as_slice()).collect();
    let actions: Vec<&[f64]> = dataset.transitions.iter().map(|t| t.action.as_slice()).collect();
    if states.is_empty() {
        return Err(Error::Config("cannot fit a density to an empty dataset".into()));
    }
    train_gaussian_density_on(
        &Tensor::from_rows(&states)?,
        &Tensor::from_rows(&actions)?,
        &spec.action_low,
        &spec.action_high,
        config,
        seed,
    )
}

pub fn train_gaussian_density_on(
    states: &Tensor,
    actions: &Tensor,
    action_low: &[f64],
    action_high: &[f64],
    config: &GaussianDensityConfig,
    seed: u64,
) -> Result<GaussianDensity> {
    let rows = states.rows();
    if rows == 0 || actions.rows() != rows {
        return Err(Error::shape("train_gaussian_density", states.shape(), actions.shape()));
    }
    let mut model = GaussianDensity::new(
        states.cols(),
        action_low,
        action_high,
        &config.hidden,
        &mut stream(seed, Stream::Init),
    )?;
    let mut optimizer = Adam::new(AdamConfig::with_lr(config.learning_rate), model.net.parameters());
    let mut batch_rng = stream(seed, Stream::Minibatch);
    for iteration in 0..config.iterations {
        let idx = sample_indices(rows, config.batch_size, &mut batch_rng)?;
        let grads = (|| -> Result<Vec<Tensor>> {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true)?;
            let s = g.constant(gather(states, &idx))?;
            let a = g.constant(gather(actions, &idx))?;
            let d = bound.log_density(&mut g, s, a)?;
            let nll = g.mean(d)?;
            let nll = g.neg(nll)?;
            g.backward(nll)?;
            Ok(bound.net.params().iter().map(|&p| g.grad(p)).collect())
        })()
        .map_err(|e| e.at_iteration(iteration))?;
        optimizer
            .step(&mut model.net.parameters_mut(), &grads)
            .map_err(|e| e.at_iteration(iteration))?;
    }
    Ok(model)
}
