//! Conditional VAE behavior model `p(a|s) = ∫ p(a|z,s) N(z; 0, I) dz`.
//!
//! The encoder maps `(s, a)` to a diagonal Gaussian posterior over `z`; the
//! decoder maps `(z, s)` to the mean of a fixed-variance Gaussian over the
//! action, squashed by `tanh` into the action box. Two log-density estimates
//! are available:
//!
//! * `samples == 1`: the negative per-datum training loss (reconstruction log
//!   likelihood minus `kl_weight` times the closed-form KL divergence);
//! * `samples >= 2`: the importance-weighted bound
//!   `log (1/L) Σ p(a|z_l,s) N(z_l; 0, I) / q(z_l|a,s)`, computed with
//!   log-sum-exp.
//!
//! Both are differentiable with respect to the action, which is how the
//! policy regularizer pulls actions toward high behavior density.

mod gaussian;
pub mod synthetic;
mod train;

use rand::Rng;
use rand_distr::StandardNormal;

pub use gaussian::{
    train_gaussian_density, train_gaussian_density_on, GaussianDensity, GaussianDensityConfig,
};
pub use train::{train_vae, train_vae_on, CvaeConfig, CvaeTrainLog};

use crate::autodiff::{checkpoint, Activation, BoundMlp, Graph, Mlp, Tensor, Var};
use crate::error::{Error, Result};

/// Encoder log-variances are clipped to `[-LOG_VAR_LIMIT, LOG_VAR_LIMIT]`.
pub const LOG_VAR_LIMIT: f64 = 8.0;
/// States per chunk when evaluating densities outside of training.
const EVAL_CHUNK_ROWS: usize = 32_768;

#[derive(Clone, Debug, PartialEq)]
pub struct CvaeModel {
    encoder: Mlp,
    decoder: Mlp,
    state_dim: usize,
    action_dim: usize,
    latent_dim: usize,
    kl_weight: f64,
    decoder_std: f64,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

/// A [`CvaeModel`] registered in a graph.
pub struct BoundCvae<'m> {
    model: &'m CvaeModel,
    encoder: BoundMlp,
    decoder: BoundMlp,
}

impl CvaeModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        action_low: &[f64],
        action_high: &[f64],
        latent_dim: usize,
        hidden: &[usize],
        kl_weight: f64,
        decoder_std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let action_dim = action_low.len();
        if action_high.len() != action_dim || action_dim == 0 {
            return Err(Error::Config("action bounds must be nonempty and paired".into()));
        }
        if !(decoder_std > 0.0) || !(kl_weight >= 0.0) || latent_dim == 0 {
            return Err(Error::Config(format!(
                "invalid CVAE settings: latent {latent_dim}, kl weight {kl_weight}, decoder std {decoder_std}"
            )));
        }
        let widths = |input: usize, output: usize| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(output);
            w
        };
        let encoder = Mlp::new(
            &widths(state_dim + action_dim, 2 * latent_dim),
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        let decoder = Mlp::new(
            &widths(latent_dim + state_dim, action_dim),
            Activation::Relu,
            Activation::Tanh,
            rng,
        )?;
        Ok(Self {
            encoder,
            decoder,
            state_dim,
            action_dim,
            latent_dim,
            kl_weight,
            decoder_std,
            action_low: action_low.to_vec(),
            action_high: action_high.to_vec(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn kl_weight(&self) -> f64 {
        self.kl_weight
    }

    pub fn decoder_std(&self) -> f64 {
        self.decoder_std
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub(crate) fn networks_mut(&mut self) -> (&mut Mlp, &mut Mlp) {
        (&mut self.encoder, &mut self.decoder)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundCvae<'_>> {
        Ok(BoundCvae {
            model: self,
            encoder: self.encoder.bind(g, trainable)?,
            decoder: self.decoder.bind(g, trainable)?,
        })
    }

    fn action_affine(&self) -> (Vec<f64>, Vec<f64>) {
        let scale = self
            .action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .collect();
        let center = self
            .action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| 0.5 * (hi + lo))
            .collect();
        (scale, center)
    }

    /// Standard normal noise for `rows` data points and `samples` latent draws
    /// each, laid out datum-major as expected by the estimators.
    pub fn latent_noise(&self, rows: usize, samples: usize, rng: &mut impl Rng) -> Tensor {
        let n = rows * samples * self.latent_dim;
        let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::matrix(rows * samples, self.latent_dim, data).expect("noise shape")
    }

    /// Per-datum log-density estimates for constant states and actions.
    /// Large requests are split into chunks; `noise` must hold
    /// `rows * samples` rows.
    pub fn iw_log_density(
        &self,
        states: &Tensor,
        actions: &Tensor,
        samples: usize,
        noise: &Tensor,
    ) -> Result<Vec<f64>> {
        let rows = states.rows();
        if actions.rows() != rows || noise.rows() != rows * samples {
            return Err(Error::shape("iw_log_density", states.shape(), noise.shape()));
        }
        let chunk = (EVAL_CHUNK_ROWS / samples.max(1)).max(1);
        let mut out = Vec::with_capacity(rows);
        let mut start = 0;
        while start < rows {
            let end = (start + chunk).min(rows);
            let take = |t: &Tensor, lo: usize, hi: usize| {
                let c = t.cols();
                Tensor::matrix(hi - lo, c, t.data()[lo * c..hi * c].to_vec())
            };
            let mut g = Graph::new();
            let bound = self.bind(&mut g, false)?;
            let s = g.constant(take(states, start, end)?)?;
            let a = g.constant(take(actions, start, end)?)?;
            let eps = take(noise, start * samples, end * samples)?;
            let density = bound.log_density(&mut g, s, a, samples, &eps)?;
            out.extend_from_slice(g.value(density).data());
            start = end;
        }
        Ok(out)
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut named = self.encoder.named_tensors("encoder");
        named.extend(self.decoder.named_tensors("decoder"));
        named.push((
            "cvae.meta".into(),
            Tensor::row(&[
                self.state_dim as f64,
                self.action_dim as f64,
                self.latent_dim as f64,
                self.kl_weight,
                self.decoder_std,
            ]),
        ));
        named.push(("cvae.action_low".into(), Tensor::row(&self.action_low)));
        named.push(("cvae.action_high".into(), Tensor::row(&self.action_high)));
        named
    }

    pub fn from_named(tensors: &[(String, Tensor)]) -> Result<Self> {
        let meta = checkpoint::find(tensors, "cvae.meta")?.data().to_vec();
        let [state_dim, action_dim, latent_dim, kl_weight, decoder_std] = meta[..] else {
            return Err(Error::Format("cvae.meta must hold five values".into()));
        };
        let encoder = Mlp::from_named(tensors, "encoder", Activation::Relu, Activation::Identity)?;
        let decoder = Mlp::from_named(tensors, "decoder", Activation::Relu, Activation::Tanh)?;
        let model = Self {
            encoder,
            decoder,
            state_dim: state_dim as usize,
            action_dim: action_dim as usize,
            latent_dim: latent_dim as usize,
            kl_weight,
            decoder_std,
            action_low: checkpoint::find(tensors, "cvae.action_low")?.data().to_vec(),
            action_high: checkpoint::find(tensors, "cvae.action_high")?.data().to_vec(),
        };
        if model.encoder.input_dim() != model.state_dim + model.action_dim
            || model.encoder.output_dim() != 2 * model.latent_dim
            || model.decoder.input_dim() != model.latent_dim + model.state_dim
            || model.decoder.output_dim() != model.action_dim
        {
            return Err(Error::Dimension("CVAE networks disagree with metadata".into()));
        }
        Ok(model)
    }
}

impl BoundCvae<'_> {
    pub fn model(&self) -> &CvaeModel {
        self.model
    }

    /// Bound parameters, encoder first, in [`CvaeModel::named_tensors`] order.
    pub fn params(&self) -> Vec<Var> {
        self.encoder.params().iter().chain(self.decoder.params()).copied().collect()
    }

    /// Posterior mean and clipped log-variance, each `[rows, latent]`.
    pub fn encode(&self, g: &mut Graph, states: Var, actions: Var) -> Result<(Var, Var)> {
        let latent = self.model.latent_dim;
        let input = g.concat_cols(&[states, actions])?;
        let out = self.encoder.forward(g, input, None)?;
        let mean = g.slice_cols(out, 0, latent)?;
        let log_var = g.slice_cols(out, latent, 2 * latent)?;
        let log_var = g.clip_all(log_var, -LOG_VAR_LIMIT, LOG_VAR_LIMIT)?;
        Ok((mean, log_var))
    }

    /// Decoder mean in action units.
    pub fn decode(&self, g: &mut Graph, latent: Var, states: Var) -> Result<Var> {
        let input = g.concat_cols(&[latent, states])?;
        let squashed = self.decoder.forward(g, input, None)?;
        let (scale, center) = self.model.action_affine();
        g.affine_cols(squashed, &scale, &center)
    }

    /// `Σ_j log N(a_j; mean_j, σ_dec²)` per row, `[rows, 1]`.
    fn reconstruction_log_likelihood(&self, g: &mut Graph, actions: Var, mean: Var) -> Result<Var> {
        let log_var = g.constant(Tensor::filled(
            vec![1, self.model.action_dim],
            2.0 * self.model.decoder_std.ln(),
        ))?;
        let per_dim = g.gaussian_log_density(actions, mean, log_var)?;
        g.sum_cols(per_dim)
    }

    /// Per-datum training loss `−log p(a|z,s) + β·KL(q(z|a,s) ‖ N(0, I))`,
    /// `[rows, 1]`, with one latent draw per row from `noise`.
    pub fn negative_elbo(
        &self,
        g: &mut Graph,
        states: Var,
        actions: Var,
        noise: &Tensor,
    ) -> Result<Var> {
        let (mean, log_var) = self.encode(g, states, actions)?;
        let z = g.reparameterize(mean, log_var, noise)?;
        let decoded = self.decode(g, z, states)?;
        let recon = self.reconstruction_log_likelihood(g, actions, decoded)?;
        // KL(N(m, e^v) ‖ N(0, 1)) = ½ Σ (m² + e^v − 1 − v).
        let m2 = g.square(mean)?;
        let ev = g.exp(log_var)?;
        let sum = g.add(m2, ev)?;
        let sum = g.sub(sum, log_var)?;
        let sum = g.offset(sum, -1.0)?;
        let kl = g.sum_cols(sum)?;
        let kl = g.scale(kl, 0.5 * self.model.kl_weight)?;
        let neg_recon = g.neg(recon)?;
        g.add(neg_recon, kl)
    }

    /// Batch-mean training loss.
    pub fn elbo_loss(&self, g: &mut Graph, states: Var, actions: Var, noise: &Tensor) -> Result<Var> {
        let per_datum = self.negative_elbo(g, states, actions, noise)?;
        g.mean(per_datum)
    }

    /// Per-datum log-density estimate, `[rows, 1]`; see the module docs.
    pub fn log_density(
        &self,
        g: &mut Graph,
        states: Var,
        actions: Var,
        samples: usize,
        noise: &Tensor,
    ) -> Result<Var> {
        if samples == 0 {
            return Err(Error::Config("the density estimator needs at least one sample".into()));
        }
        if samples == 1 {
            let loss = self.negative_elbo(g, states, actions, noise)?;
            return g.neg(loss);
        }
        let latent = self.model.latent_dim;
        let s = g.repeat_rows(states, samples)?;
        let a = g.repeat_rows(actions, samples)?;
        let (mean, log_var) = self.encode(g, s, a)?;
        let z = g.reparameterize(mean, log_var, noise)?;
        let decoded = self.decode(g, z, s)?;
        let log_likelihood = self.reconstruction_log_likelihood(g, a, decoded)?;
        let zero = g.constant(Tensor::zeros(vec![1, latent]))?;
        let prior = g.gaussian_log_density(z, zero, zero)?;
        let prior = g.sum_cols(prior)?;
        let posterior = g.gaussian_log_density(z, mean, log_var)?;
        let posterior = g.sum_cols(posterior)?;
        let joint = g.add(log_likelihood, prior)?;
        let log_weight = g.sub(joint, posterior)?;
        g.log_mean_exp_rows(log_weight, samples)
    }
}

/// Behavior density used by the policy regularizer.
#[derive(Clone, Debug, PartialEq)]
pub enum DensityModel {
    Cvae(CvaeModel),
    Gaussian(GaussianDensity),
}

impl DensityModel {
    pub fn state_dim(&self) -> usize {
        match self {
            DensityModel::Cvae(m) => m.state_dim(),
            DensityModel::Gaussian(m) => m.state_dim(),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            DensityModel::Cvae(m) => m.action_dim(),
            DensityModel::Gaussian(m) => m.action_dim(),
        }
    }

    /// Noise needed for `rows` data points at `samples` draws each.
    pub fn noise(&self, rows: usize, samples: usize, rng: &mut impl Rng) -> Option<Tensor> {
        match self {
            DensityModel::Cvae(m) => Some(m.latent_noise(rows, samples, rng)),
            DensityModel::Gaussian(_) => None,
        }
    }

    /// Differentiable per-datum estimate of `log π_β(a|s)` with frozen
    /// parameters, `[rows, 1]`.
    pub fn log_density_graph(
        &self,
        g: &mut Graph,
        states: Var,
        actions: Var,
        samples: usize,
        noise: Option<&Tensor>,
    ) -> Result<Var> {
        match self {
            DensityModel::Cvae(m) => {
                let noise = noise.ok_or_else(|| Error::Contract("CVAE density needs noise".into()))?;
                let bound = m.bind(g, false)?;
                bound.log_density(g, states, actions, samples, noise)
            }
            DensityModel::Gaussian(m) => {
                let bound = m.bind(g, false)?;
                bound.log_density(g, states, actions)
            }
        }
    }

    pub fn log_density(
        &self,
        states: &Tensor,
        actions: &Tensor,
        samples: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        match self {
            DensityModel::Cvae(m) => {
                let noise = m.latent_noise(states.rows(), samples, rng);
                m.iw_log_density(states, actions, samples, &noise)
            }
            DensityModel::Gaussian(m) => m.log_density(states, actions),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        match self {
            DensityModel::Cvae(m) => m.named_tensors(),
            DensityModel::Gaussian(m) => m.named_tensors(),
        }
    }

    pub fn from_named(tensors: &[(String, Tensor)]) -> Result<Self> {
        if checkpoint::find(tensors, "cvae.meta").is_ok() {
            CvaeModel::from_named(tensors).map(DensityModel::Cvae)
        } else {
            GaussianDensity::from_named(tensors).map(DensityModel::Gaussian)
        }
    }
}
