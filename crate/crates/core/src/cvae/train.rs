use super::CvaeModel;
use crate::autodiff::{Adam, AdamConfig, Graph, Tensor};
use crate::data::{sample_indices, OfflineDataset};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct CvaeConfig {
    /// Defaults to twice the action dimension.
    pub latent_dim: Option<usize>,
    pub hidden: Vec<usize>,
    pub kl_weight: f64,
    pub decoder_std: f64,
    pub learning_rate: f64,
    /// Learning rate at the last iteration as a fraction of `learning_rate`,
    /// reached by linear annealing. `1.0` keeps the rate constant.
    pub final_lr_fraction: f64,
    pub batch_size: usize,
    pub iterations: usize,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: None,
            hidden: vec![64, 64],
            kl_weight: 0.5,
            decoder_std: 1.0,
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            batch_size: 256,
            iterations: 20_000,
        }
    }
}

/// Training loss after every iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CvaeTrainLog {
    pub losses: Vec<f64>,
}

impl CvaeTrainLog {
    /// Mean loss over the first and last `fraction` of iterations.
    pub fn window_means(&self, fraction: f64) -> (f64, f64) {
        let n = ((self.losses.len() as f64 * fraction).ceil() as usize).clamp(1, self.losses.len().max(1));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        (mean(&self.losses[..n]), mean(&self.losses[self.losses.len() - n..]))
    }
}

/// Fits a CVAE to the dataset's state-action pairs with Adam.
pub fn train_vae(
    dataset: &OfflineDataset,
    config: &CvaeConfig,
    seed: u64,
) -> Result<(CvaeModel, CvaeTrainLog)> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot train a CVAE on an empty dataset".into()));
    }
    let spec = dataset.env.spec();
    let states: Vec<&[f64]> = dataset.transitions.iter().map(|t| t.state.as_slice()).collect();
    let actions: Vec<&[f64]> = dataset.transitions.iter().map(|t| t.action.as_slice()).collect();
    train_vae_on(
        &Tensor::from_rows(&states)?,
        &Tensor::from_rows(&actions)?,
        &spec.action_low,
        &spec.action_high,
        config,
        seed,
    )
}

/// Fits a CVAE to paired rows of `states` and `actions`.
pub fn train_vae_on(
    states: &Tensor,
    actions: &Tensor,
    action_low: &[f64],
    action_high: &[f64],
    config: &CvaeConfig,
    seed: u64,
) -> Result<(CvaeModel, CvaeTrainLog)> {
    let rows = states.rows();
    if rows == 0 || actions.rows() != rows {
        return Err(Error::shape("train_vae", states.shape(), actions.shape()));
    }
    let latent = config.latent_dim.unwrap_or(2 * actions.cols());
    let mut model = CvaeModel::new(
        states.cols(),
        action_low,
        action_high,
        latent,
        &config.hidden,
        config.kl_weight,
        config.decoder_std,
        &mut stream(seed, Stream::Init),
    )?;
    let mut batch_rng = stream(seed, Stream::Minibatch);
    let mut noise_rng = stream(seed, Stream::Latent);
    let mut optimizer = Adam::new(
        AdamConfig::with_lr(config.learning_rate),
        model.encoder().parameters().into_iter().chain(model.decoder().parameters()),
    );
    let mut log = CvaeTrainLog::default();
    for iteration in 0..config.iterations {
        let progress = iteration as f64 / config.iterations as f64;
        optimizer.set_learning_rate(
            config.learning_rate * (1.0 - progress * (1.0 - config.final_lr_fraction)),
        );
        let idx = sample_indices(rows, config.batch_size, &mut batch_rng)?;
        let s = gather(states, &idx);
        let a = gather(actions, &idx);
        let noise = model.latent_noise(idx.len(), 1, &mut noise_rng);
        let step = || -> Result<(f64, Vec<Tensor>)> {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true)?;
            let sv = g.constant(s)?;
            let av = g.constant(a)?;
            let loss = bound.elbo_loss(&mut g, sv, av, &noise)?;
            g.backward(loss)?;
            let grads = bound
                .encoder
                .params()
                .iter()
                .chain(bound.decoder.params())
                .map(|&p| g.grad(p))
                .collect();
            Ok((g.value(loss).item(), grads))
        };
        let (loss, grads) = step().map_err(|e| e.at_iteration(iteration))?;
        let (enc, dec) = model.networks_mut();
        let mut params = enc.parameters_mut();
        params.extend(dec.parameters_mut());
        optimizer
            .step(&mut params, &grads)
            .map_err(|e| e.at_iteration(iteration))?;
        log.losses.push(loss);
    }
    Ok((model, log))
}

/// Rows of `t` at `idx`, in order.
pub(crate) fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let c = t.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(t.row_slice(i));
    }
    Tensor::matrix(idx.len(), c, data).expect("gathered shape")
}
