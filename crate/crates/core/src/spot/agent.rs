use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::policy::DeterministicPolicy;
use super::SpotConfig;
use crate::autodiff::checkpoint::{self, find};
use crate::autodiff::{dropout_masks, Activation, Adam, AdamConfig, BoundMlp, Graph, Mlp, Tensor, Var};
use crate::cvae::DensityModel;
use crate::data::{Batch, NormalizationStats};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Floor of the Q normalizer.
pub const NORMALIZER_FLOOR: f64 = 1e-8;

/// `mean |q|` floored at [`NORMALIZER_FLOOR`], or `1` when normalization is off.
pub fn normalizer(q: &[f64], enabled: bool) -> f64 {
    if !enabled || q.is_empty() {
        return 1.0;
    }
    let mean = q.iter().map(|v| v.abs()).sum::<f64>() / q.len() as f64;
    mean.max(NORMALIZER_FLOOR)
}

/// Externally drawn randomness of one actor update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActorNoise {
    /// Latent noise of the density estimate (`rows * samples` rows); unused
    /// by the Gaussian density.
    pub density: Option<Tensor>,
    /// One inverted-dropout mask per hidden actor layer.
    pub dropout: Option<Vec<Tensor>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActorStats {
    pub loss: f64,
    /// Mean `Q1(s, π(s))` over the batch.
    pub mean_q: f64,
    /// Mean estimated `log π̂_β(π(s)|s)` over the batch.
    pub mean_log_density: f64,
    pub normalizer: f64,
}

/// Random streams consumed by [`SpotAgent::train_step`].
#[derive(Clone, Debug)]
pub struct UpdateRngs {
    pub target: ChaCha8Rng,
    pub latent: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl UpdateRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            target: stream(seed, Stream::TargetNoise),
            latent: stream(seed, Stream::Latent),
            dropout: stream(seed, Stream::Dropout),
        }
    }
}

/// Result of one critic update, and of the actor update when one was due.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateOutcome {
    pub critic_loss: f64,
    pub mean_q: f64,
    pub actor: Option<ActorStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpotAgent {
    config: SpotConfig,
    actor: DeterministicPolicy,
    actor_target: DeterministicPolicy,
    critics: [Mlp; 2],
    critic_targets: [Mlp; 2],
    density: DensityModel,
    actor_optimizer: Adam,
    critic_optimizer: Adam,
    critic_updates: u64,
}

struct CriticGraph {
    loss: Var,
    mean_q: f64,
    online: [BoundMlp; 2],
    target_leaves: Vec<Var>,
}

struct ActorGraph {
    loss: Var,
    actor: BoundMlp,
    stats: ActorStats,
}

fn critic_net(spec: &EnvSpec, hidden: &[usize], rng: &mut impl Rng) -> Result<Mlp> {
    let mut widths = vec![spec.state_dim + spec.action_dim];
    widths.extend_from_slice(hidden);
    widths.push(1);
    Mlp::new(&widths, Activation::Relu, Activation::Identity, rng)
}

impl SpotAgent {
    /// Fresh agent. Networks are initialized from the `Init` stream of `seed`;
    /// targets start as copies of the online networks.
    pub fn new(
        spec: &EnvSpec,
        density: DensityModel,
        observation_stats: Option<NormalizationStats>,
        config: &SpotConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if density.state_dim() != spec.state_dim || density.action_dim() != spec.action_dim {
            return Err(Error::Dimension(format!(
                "density model is {}→{} but the environment is {}→{}",
                density.state_dim(),
                density.action_dim(),
                spec.state_dim,
                spec.action_dim
            )));
        }
        let mut rng = stream(seed, Stream::Init);
        let actor = DeterministicPolicy::new(spec, &config.actor_hidden, observation_stats, &mut rng)?;
        let critics = [
            critic_net(spec, &config.critic_hidden, &mut rng)?,
            critic_net(spec, &config.critic_hidden, &mut rng)?,
        ];
        Self::assemble(config.clone(), actor.clone(), actor, critics.clone(), critics, density, 0)
    }

    fn assemble(
        config: SpotConfig,
        actor: DeterministicPolicy,
        actor_target: DeterministicPolicy,
        critics: [Mlp; 2],
        critic_targets: [Mlp; 2],
        density: DensityModel,
        critic_updates: u64,
    ) -> Result<Self> {
        let actor_optimizer = Adam::new(AdamConfig::with_lr(config.actor_lr), actor.network().parameters());
        let critic_optimizer = Adam::new(
            AdamConfig::with_lr(config.critic_lr),
            critics.iter().flat_map(|c| c.parameters()),
        );
        Ok(Self {
            config,
            actor,
            actor_target,
            critics,
            critic_targets,
            density,
            actor_optimizer,
            critic_optimizer,
            critic_updates,
        })
    }

    pub fn config(&self) -> &SpotConfig {
        &self.config
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {lambda}")));
        }
        self.config.lambda = lambda;
        Ok(())
    }

    pub fn set_discount(&mut self, discount: f64) -> Result<()> {
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::Config(format!("discount must lie in [0, 1), got {discount}")));
        }
        self.config.discount = discount;
        Ok(())
    }

    pub fn actor(&self) -> &DeterministicPolicy {
        &self.actor
    }

    pub fn actor_target(&self) -> &DeterministicPolicy {
        &self.actor_target
    }

    pub fn critics(&self) -> &[Mlp; 2] {
        &self.critics
    }

    pub fn critic_targets(&self) -> &[Mlp; 2] {
        &self.critic_targets
    }

    pub fn density(&self) -> &DensityModel {
        &self.density
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    #[cfg(test)]
    pub(crate) fn parts_mut(&mut self) -> (&mut DeterministicPolicy, &mut [Mlp; 2], &mut [Mlp; 2]) {
        (&mut self.actor, &mut self.critics, &mut self.critic_targets)
    }

    /// Target smoothing noise in action units: `N(0, σ²)` clipped to
    /// `±noise_clip`, both relative to the action half-range.
    pub fn target_noise(&self, rows: usize, rng: &mut impl Rng) -> Tensor {
        let scale = self.actor.action_scale();
        let dim = scale.len();
        let (sigma, clip) = (self.config.policy_noise, self.config.noise_clip);
        let data = (0..rows * dim)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                (sigma * z).clamp(-clip, clip) * scale[i % dim]
            })
            .collect();
        Tensor::matrix(rows, dim, data).expect("noise shape")
    }

    /// Noise for one actor update on `rows` states.
    pub fn actor_noise(&self, rows: usize, latent: &mut impl Rng, dropout: &mut impl Rng) -> ActorNoise {
        ActorNoise {
            density: self.density.noise(rows, self.config.density_samples, latent),
            dropout: (self.config.actor_dropout > 0.0)
                .then(|| dropout_masks(self.actor.network(), rows, self.config.actor_dropout, dropout)),
        }
    }

    fn check_batch(&self, batch: &Batch, noise: &Tensor) -> Result<()> {
        let (sd, ad) = (self.actor.state_dim(), self.actor.action_dim());
        if batch.states.cols() != sd || batch.next_states.cols() != sd || batch.actions.cols() != ad {
            return Err(Error::Dimension(format!(
                "batch has state/action widths {}/{} but the agent expects {sd}/{ad}",
                batch.states.cols(),
                batch.actions.cols()
            )));
        }
        if noise.shape() != [batch.len(), ad] {
            return Err(Error::shape("target noise", noise.shape(), &[batch.len(), ad]));
        }
        Ok(())
    }

    /// `r + γ·(1 − done)·min(Q̄1, Q̄2)(s′, clip(π̄(s′) + noise))`, built from
    /// constant leaves only. Returns the value and the target-network leaves.
    fn target_values(&self, g: &mut Graph, batch: &Batch, noise: &Tensor) -> Result<(Var, Vec<Var>)> {
        let next = g.constant(batch.next_states.clone())?;
        let actor = self.actor_target.network().bind(g, false)?;
        let next_action = self.actor_target.forward(g, &actor, next, None)?;
        let eps = g.constant(noise.clone())?;
        let next_action = g.add(next_action, eps)?;
        let next_action = g.clip(next_action, self.actor.action_low(), self.actor.action_high())?;
        let input = g.concat_cols(&[next, next_action])?;
        let t1 = self.critic_targets[0].bind(g, false)?;
        let t2 = self.critic_targets[1].bind(g, false)?;
        let q1 = t1.forward(g, input, None)?;
        let q2 = t2.forward(g, input, None)?;
        let q = g.min(q1, q2)?;
        let not_done = g.constant(batch.not_done.clone())?;
        let bootstrap = g.mul(q, not_done)?;
        let bootstrap = g.scale(bootstrap, self.config.discount)?;
        let reward = g.constant(batch.rewards.clone())?;
        let y = g.add(reward, bootstrap)?;
        let leaves = actor
            .params()
            .iter()
            .chain(t1.params())
            .chain(t2.params())
            .copied()
            .collect();
        Ok((y, leaves))
    }

    /// Backup targets `y` for a batch, `[n, 1]`.
    pub fn critic_target(&self, batch: &Batch, noise: &Tensor) -> Result<Tensor> {
        self.check_batch(batch, noise)?;
        let mut g = Graph::new();
        let (y, _) = self.target_values(&mut g, batch, noise)?;
        Ok(g.value(y).clone())
    }

    fn critic_graph(&self, g: &mut Graph, batch: &Batch, noise: &Tensor) -> Result<CriticGraph> {
        self.check_batch(batch, noise)?;
        let (y, target_leaves) = self.target_values(g, batch, noise)?;
        let s = g.constant(batch.states.clone())?;
        let a = g.constant(batch.actions.clone())?;
        let input = g.concat_cols(&[s, a])?;
        let online = [self.critics[0].bind(g, true)?, self.critics[1].bind(g, true)?];
        let mut loss = None;
        let mut mean_q = 0.0;
        for (i, critic) in online.iter().enumerate() {
            let q = critic.forward(g, input, None)?;
            if i == 0 {
                mean_q = g.value(q).mean();
            }
            let diff = g.sub(q, y)?;
            let sq = g.square(diff)?;
            let mse = g.mean(sq)?;
            loss = Some(match loss {
                None => mse,
                Some(prev) => g.add(prev, mse)?,
            });
        }
        Ok(CriticGraph {
            loss: loss.expect("two critics"),
            mean_q,
            online,
            target_leaves,
        })
    }

    /// Loss value and gradients (critic 1 parameters, then critic 2) without
    /// changing the agent.
    pub fn critic_gradients(&self, batch: &Batch, noise: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let parts = self.critic_graph(&mut g, batch, noise)?;
        debug_assert!(parts.target_leaves.iter().all(|&leaf| !g.requires_grad(leaf)));
        g.backward(parts.loss)?;
        let grads = parts
            .online
            .iter()
            .flat_map(|c| c.params().iter().map(|&p| g.grad(p)).collect::<Vec<_>>())
            .collect();
        Ok((g.value(parts.loss).item(), grads))
    }

    /// Sum of both critics' mean squared errors against the shared target,
    /// followed by one Adam step on both critics. Returns the loss before the
    /// step and the batch mean of `Q1(s, a)`.
    pub fn critic_update(&mut self, batch: &Batch, noise: &Tensor) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        let parts = self.critic_graph(&mut g, batch, noise)?;
        g.backward(parts.loss)?;
        let grads: Vec<Tensor> = parts
            .online
            .iter()
            .flat_map(|c| c.params().iter().map(|&p| g.grad(p)).collect::<Vec<_>>())
            .collect();
        let loss = g.value(parts.loss).item();
        let [c1, c2] = &mut self.critics;
        let mut params = c1.parameters_mut();
        params.extend(c2.parameters_mut());
        self.critic_optimizer.step(&mut params, &grads)?;
        self.critic_updates += 1;
        Ok((loss, parts.mean_q))
    }

    /// Q normalizer of the current actor on `batch`.
    pub fn q_normalizer(&self, batch: &Batch) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("the Q normalizer needs a nonempty batch".into()));
        }
        let actions = self.actor.actions(&batch.states)?;
        let input = concat_rows(&batch.states, &actions)?;
        let q = self.critics[0].predict(&input)?;
        Ok(normalizer(q.data(), self.config.q_norm))
    }

    fn actor_graph(&self, g: &mut Graph, states: &Tensor, noise: &ActorNoise) -> Result<ActorGraph> {
        let s = g.constant(states.clone())?;
        let actor = self.actor.network().bind(g, true)?;
        let a = self.actor.forward(g, &actor, s, noise.dropout.as_deref())?;
        let input = g.concat_cols(&[s, a])?;
        let q = self.critics[0].bind(g, false)?.forward(g, input, None)?;
        let alpha = normalizer(g.value(q).data(), self.config.q_norm);
        let mean_q = g.mean(q)?;
        let mut loss = g.scale(mean_q, -1.0 / alpha)?;
        let log_density = self.density.log_density_graph(
            g,
            s,
            a,
            self.config.density_samples,
            noise.density.as_ref(),
        )?;
        let mean_log_density = g.mean(log_density)?;
        if self.config.lambda > 0.0 {
            let reg = g.scale(mean_log_density, -self.config.lambda)?;
            loss = g.add(loss, reg)?;
        }
        let stats = ActorStats {
            loss: g.value(loss).item(),
            mean_q: g.value(mean_q).item(),
            mean_log_density: g.value(mean_log_density).item(),
            normalizer: alpha,
        };
        Ok(ActorGraph { loss, actor, stats })
    }

    /// Actor loss and its gradient with respect to the actor parameters,
    /// without changing the agent.
    pub fn actor_gradients(&self, states: &Tensor, noise: &ActorNoise) -> Result<(ActorStats, Vec<Tensor>)> {
        let mut g = Graph::new();
        let parts = self.actor_graph(&mut g, states, noise)?;
        g.backward(parts.loss)?;
        let grads = parts.actor.params().iter().map(|&p| g.grad(p)).collect();
        Ok((parts.stats, grads))
    }

    /// One Adam step on the actor followed by the Polyak update of all three
    /// target networks.
    pub fn actor_update(&mut self, batch: &Batch, noise: &ActorNoise) -> Result<ActorStats> {
        let (stats, grads) = self.actor_gradients(&batch.states, noise)?;
        let mut params = self.actor.network_mut().parameters_mut();
        self.actor_optimizer.step(&mut params, &grads)?;
        self.soft_update_targets();
        Ok(stats)
    }

    pub fn soft_update_targets(&mut self) {
        let tau = self.config.tau;
        self.actor_target
            .network_mut()
            .soft_update_from(self.actor.network(), tau);
        for (target, online) in self.critic_targets.iter_mut().zip(&self.critics) {
            target.soft_update_from(online, tau);
        }
    }

    /// One critic update, plus an actor update every `policy_update_freq`
    /// critic updates.
    pub fn train_step(&mut self, batch: &Batch, rngs: &mut UpdateRngs) -> Result<UpdateOutcome> {
        let noise = self.target_noise(batch.len(), &mut rngs.target);
        let (critic_loss, mean_q) = self.critic_update(batch, &noise)?;
        let actor = if self.critic_updates % self.config.policy_update_freq as u64 == 0 {
            let noise = self.actor_noise(batch.len(), &mut rngs.latent, &mut rngs.dropout);
            Some(self.actor_update(batch, &noise)?)
        } else {
            None
        };
        Ok(UpdateOutcome {
            critic_loss,
            mean_q,
            actor,
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let c = &self.config;
        let mut named = vec![(
            "spot.meta".to_string(),
            Tensor::row(&[
                c.lambda,
                c.discount,
                c.tau,
                c.policy_noise,
                c.noise_clip,
                c.policy_update_freq as f64,
                f64::from(u8::from(c.q_norm)),
                c.actor_dropout,
                c.density_samples as f64,
                self.critic_updates as f64,
            ]),
        )];
        named.extend(self.actor.named_tensors("actor"));
        named.extend(self.actor_target.named_tensors("actor_target"));
        for (i, (online, target)) in self.critics.iter().zip(&self.critic_targets).enumerate() {
            named.extend(online.named_tensors(&format!("critic{}", i + 1)));
            named.extend(target.named_tensors(&format!("critic{}_target", i + 1)));
        }
        named.extend(self.density.named_tensors());
        named
    }

    /// Rebuilds an agent. Hyperparameters stored in the checkpoint override
    /// those of `base`; optimizer moments start fresh.
    pub fn from_named(tensors: &[(String, Tensor)], base: &SpotConfig) -> Result<Self> {
        let meta = find(tensors, "spot.meta")?.data().to_vec();
        let [lambda, discount, tau, policy_noise, noise_clip, freq, q_norm, dropout, samples, updates] =
            meta[..]
        else {
            return Err(Error::Format(format!("spot.meta has {} entries, expected 10", meta.len())));
        };
        let actor = DeterministicPolicy::from_named(tensors, "actor")?;
        let actor_target = DeterministicPolicy::from_named(tensors, "actor_target")?;
        let net = |name: &str| Mlp::from_named(tensors, name, Activation::Relu, Activation::Identity);
        let critics = [net("critic1")?, net("critic2")?];
        let critic_targets = [net("critic1_target")?, net("critic2_target")?];
        let config = SpotConfig {
            lambda,
            discount,
            tau,
            policy_noise,
            noise_clip,
            policy_update_freq: freq as usize,
            q_norm: q_norm != 0.0,
            actor_dropout: dropout,
            density_samples: samples as usize,
            actor_hidden: actor.network().widths()[1..actor.network().widths().len() - 1].to_vec(),
            critic_hidden: critics[0].widths()[1..critics[0].widths().len() - 1].to_vec(),
            ..base.clone()
        };
        config.validate()?;
        let density = DensityModel::from_named(tensors)?;
        Self::assemble(config, actor, actor_target, critics, critic_targets, density, updates as u64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_tensors(BufWriter::new(File::create(path)?), &self.named_tensors())
    }

    pub fn load(path: &Path, base: &SpotConfig) -> Result<Self> {
        let tensors = checkpoint::read_tensors(BufReader::new(File::open(path)?))?;
        Self::from_named(&tensors, base)
    }
}

/// `[a | b]` for two matrices with equal row counts.
pub(crate) fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return Err(Error::shape("concat", a.shape(), b.shape()));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for r in 0..a.rows() {
        data.extend_from_slice(a.row_slice(r));
        data.extend_from_slice(b.row_slice(r));
    }
    Tensor::matrix(a.rows(), a.cols() + b.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::{train_gaussian_density_on, GaussianDensity, GaussianDensityConfig};
    use crate::data::{generate, Regime};
    use crate::envs::EnvKind;
    use proptest::prelude::*;

    fn small_config() -> SpotConfig {
        SpotConfig {
            actor_hidden: vec![8, 8],
            critic_hidden: vec![8, 8],
            actor_dropout: 0.0,
            batch_size: 16,
            ..SpotConfig::default()
        }
    }

    fn gaussian(seed: u64) -> DensityModel {
        let spec = EnvKind::Pendulum.spec();
        DensityModel::Gaussian(
            GaussianDensity::new(spec.state_dim, &spec.action_low, &spec.action_high, &[8], &mut stream(seed, Stream::Init))
                .unwrap(),
        )
    }

    fn agent(config: &SpotConfig, seed: u64) -> SpotAgent {
        SpotAgent::new(&EnvKind::Pendulum.spec(), gaussian(seed + 100), None, config, seed).unwrap()
    }

    fn batch(n: usize, seed: u64) -> Batch {
        let data = generate(EnvKind::Pendulum, Regime::Medium, 200, seed).unwrap();
        data.sample_minibatch(n, &mut stream(seed, Stream::Minibatch)).unwrap()
    }

    /// Plain-loop forward pass of an MLP on one input row.
    fn forward_row(net: &Mlp, x: &[f64], output: fn(f64) -> f64) -> Vec<f64> {
        let params = net.parameters();
        let layers = params.len() / 2;
        let mut h = x.to_vec();
        for l in 0..layers {
            let (w, b) = (params[2 * l], params[2 * l + 1]);
            let mut next = b.data().to_vec();
            for (i, &hi) in h.iter().enumerate() {
                for (j, out) in next.iter_mut().enumerate() {
                    *out += hi * w.get(i, j);
                }
            }
            let act: fn(f64) -> f64 = if l + 1 == layers { output } else { |v: f64| v.max(0.0) };
            h = next.into_iter().map(act).collect();
        }
        h
    }

    fn policy_row(policy: &DeterministicPolicy, s: &[f64]) -> Vec<f64> {
        forward_row(policy.network(), s, f64::tanh)
            .iter()
            .zip(policy.action_low().iter().zip(policy.action_high()))
            .map(|(&t, (&lo, &hi))| lo + (t + 1.0) * (hi - lo) / 2.0)
            .collect()
    }

    fn q_row(net: &Mlp, s: &[f64], a: &[f64]) -> f64 {
        let input: Vec<f64> = s.iter().chain(a).copied().collect();
        forward_row(net, &input, |v| v)[0]
    }

    fn oracle_targets(agent: &SpotAgent, batch: &Batch, noise: &Tensor) -> Vec<f64> {
        (0..batch.len())
            .map(|i| {
                let next = batch.next_states.row_slice(i);
                let a: Vec<f64> = policy_row(agent.actor_target(), next)
                    .iter()
                    .zip(noise.row_slice(i))
                    .zip(agent.actor().action_low().iter().zip(agent.actor().action_high()))
                    .map(|((&p, &e), (&lo, &hi))| (p + e).clamp(lo, hi))
                    .collect();
                let [t1, t2] = agent.critic_targets();
                let q = q_row(t1, next, &a).min(q_row(t2, next, &a));
                batch.rewards.get(i, 0) + agent.config().discount * batch.not_done.get(i, 0) * q
            })
            .collect()
    }

    fn perturb(agent: &mut SpotAgent) {
        let mut rng = stream(9, Stream::Exploration);
        let (actor, critics, targets) = agent.parts_mut();
        let nets = std::iter::once(actor.network_mut()).chain(critics.iter_mut()).chain(targets.iter_mut());
        for net in nets {
            for p in net.parameters_mut() {
                for v in p.data_mut() {
                    *v += rand::Rng::random_range(&mut rng, -0.3..0.3);
                }
            }
        }
    }

    #[test]
    fn terminal_transitions_back_up_only_the_reward() {
        let agent = agent(&small_config(), 0);
        let mut b = batch(8, 0);
        b.not_done = Tensor::zeros(vec![8, 1]);
        let noise = agent.target_noise(8, &mut stream(0, Stream::TargetNoise));
        let y = agent.critic_target(&b, &noise).unwrap();
        assert_eq!(y.data(), b.rewards.data());
    }

    #[test]
    fn backup_matches_independent_forward_pass() {
        let mut agent = agent(&small_config(), 1);
        perturb(&mut agent);
        let b = batch(12, 1);
        for noise in [
            Tensor::zeros(vec![12, 1]),
            agent.target_noise(12, &mut stream(1, Stream::TargetNoise)),
        ] {
            let y = agent.critic_target(&b, &noise).unwrap();
            for (got, want) in y.data().iter().zip(oracle_targets(&agent, &b, &noise)) {
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn smoothing_noise_is_clipped_in_action_units() {
        let config = SpotConfig {
            policy_noise: 5.0,
            ..small_config()
        };
        let agent = agent(&config, 0);
        let noise = agent.target_noise(2000, &mut stream(0, Stream::TargetNoise));
        let bound = config.noise_clip * 2.0;
        assert!(noise.data().iter().all(|v| v.abs() <= bound + 1e-12));
        assert!(noise.data().iter().any(|v| (v.abs() - bound).abs() < 1e-12));
    }

    #[test]
    fn critic_loss_matches_oracle_and_finite_differences() {
        let mut agent = agent(&small_config(), 2);
        perturb(&mut agent);
        let b = batch(10, 2);
        let noise = agent.target_noise(10, &mut stream(2, Stream::TargetNoise));
        let loss_of = |agent: &SpotAgent| -> f64 {
            let y = oracle_targets(agent, &b, &noise);
            agent
                .critics()
                .iter()
                .map(|c| {
                    (0..b.len())
                        .map(|i| (q_row(c, b.states.row_slice(i), b.actions.row_slice(i)) - y[i]).powi(2))
                        .sum::<f64>()
                        / b.len() as f64
                })
                .sum()
        };
        let (loss, grads) = agent.critic_gradients(&b, &noise).unwrap();
        assert!(loss >= 0.0);
        assert!((loss - loss_of(&agent)).abs() < 1e-10);
        let h = 1e-6;
        let per_critic = agent.critics()[0].parameters().len();
        for (critic, param, index) in [(0, 0, 3), (0, 5, 0), (1, 2, 4), (1, 4, 1)] {
            let shift = |agent: &mut SpotAgent, delta: f64| {
                let (_, critics, _) = agent.parts_mut();
                critics[critic].parameters_mut()[param].data_mut()[index] += delta;
            };
            let mut plus = agent.clone();
            shift(&mut plus, h);
            let mut minus = agent.clone();
            shift(&mut minus, -h);
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let analytic = grads[critic * per_critic + param].data()[index];
            assert!((numeric - analytic).abs() < 1e-6 * (1.0 + numeric.abs()), "{numeric} vs {analytic}");
        }
    }

    #[test]
    fn target_networks_receive_no_gradient() {
        let agent = agent(&small_config(), 3);
        let b = batch(6, 3);
        let noise = agent.target_noise(6, &mut stream(3, Stream::TargetNoise));
        let mut g = Graph::new();
        let parts = agent.critic_graph(&mut g, &b, &noise).unwrap();
        g.backward(parts.loss).unwrap();
        assert!(!parts.target_leaves.is_empty());
        for &leaf in &parts.target_leaves {
            assert!(!g.requires_grad(leaf));
            assert!(g.grad(leaf).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn fitted_critics_stay_put() {
        let mut agent = agent(&small_config(), 4);
        let mut b = batch(16, 4);
        b.not_done = Tensor::zeros(vec![16, 1]);
        b.rewards = Tensor::filled(vec![16, 1], -1.5);
        {
            let (_, critics, _) = agent.parts_mut();
            for critic in critics.iter_mut() {
                let mut params = critic.parameters_mut();
                let last = params.len();
                params[last - 2].data_mut().fill(0.0);
                params[last - 1].data_mut().fill(-1.5);
            }
        }
        let before = agent.critics().clone();
        let noise = Tensor::zeros(vec![16, 1]);
        let (loss, mean_q) = agent.critic_update(&b, &noise).unwrap();
        assert!(loss < 1e-10);
        assert_eq!(mean_q, -1.5);
        for (old, new) in before.iter().zip(agent.critics()) {
            for (p, q) in old.parameters().iter().zip(new.parameters()) {
                for (x, y) in p.data().iter().zip(q.data()) {
                    assert!((x - y).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn normalizer_hand_values() {
        assert_eq!(normalizer(&[1.0, -2.0, 3.0], true), 2.0);
        assert_eq!(normalizer(&[1.0, -2.0, 3.0], false), 1.0);
        assert_eq!(normalizer(&[0.0, 0.0], true), NORMALIZER_FLOOR);
        let agent = agent(&small_config(), 0);
        let empty = Batch {
            states: Tensor::zeros(vec![0, 3]),
            actions: Tensor::zeros(vec![0, 1]),
            rewards: Tensor::zeros(vec![0, 1]),
            next_states: Tensor::zeros(vec![0, 3]),
            not_done: Tensor::zeros(vec![0, 1]),
        };
        assert!(matches!(agent.q_normalizer(&empty), Err(Error::Config(_))));
    }

    #[test]
    fn zero_weight_reduces_to_normalized_td3() {
        let config = SpotConfig {
            lambda: 0.0,
            ..small_config()
        };
        let mut agent = agent(&config, 5);
        perturb(&mut agent);
        let b = batch(12, 5);
        let (stats, grads) = agent.actor_gradients(&b.states, &ActorNoise::default()).unwrap();

        let mut g = Graph::new();
        let s = g.constant(b.states.clone()).unwrap();
        let actor = agent.actor().network().bind(&mut g, true).unwrap();
        let a = agent.actor().forward(&mut g, &actor, s, None).unwrap();
        let input = g.concat_cols(&[s, a]).unwrap();
        let q = agent.critics()[0].bind(&mut g, false).unwrap().forward(&mut g, input, None).unwrap();
        let alpha = g.value(q).data().iter().map(|v| v.abs()).sum::<f64>() / b.len() as f64;
        let mean_q = g.mean(q).unwrap();
        let loss = g.scale(mean_q, -1.0 / alpha).unwrap();
        g.backward(loss).unwrap();

        assert_eq!(stats.normalizer, alpha);
        assert_eq!(stats.loss, g.value(loss).item());
        assert_eq!(stats.loss, -stats.mean_q / alpha);
        for (got, &p) in grads.iter().zip(actor.params()) {
            assert_eq!(got, &g.grad(p));
        }
    }

    #[test]
    fn composed_actor_loss_matches_finite_differences() {
        let config = SpotConfig {
            lambda: 0.7,
            q_norm: false,
            ..small_config()
        };
        let mut agent = agent(&config, 6);
        perturb(&mut agent);
        let b = batch(10, 6);
        let DensityModel::Gaussian(density) = agent.density().clone() else {
            unreachable!()
        };
        let loss_of = |agent: &SpotAgent| -> f64 {
            let actions = agent.actor().actions(&b.states).unwrap();
            let logp = density.log_density(&b.states, &actions).unwrap();
            let q: Vec<f64> = (0..b.len())
                .map(|i| q_row(&agent.critics()[0], b.states.row_slice(i), actions.row_slice(i)))
                .collect();
            let n = b.len() as f64;
            -q.iter().sum::<f64>() / n - 0.7 * logp.iter().sum::<f64>() / n
        };
        let (stats, grads) = agent.actor_gradients(&b.states, &ActorNoise::default()).unwrap();
        assert!((stats.loss - loss_of(&agent)).abs() < 1e-10);
        let h = 1e-6;
        for (param, index) in [(0, 2), (1, 5), (2, 7), (4, 3), (5, 0)] {
            let shift = |agent: &mut SpotAgent, delta: f64| {
                let (actor, _, _) = agent.parts_mut();
                actor.network_mut().parameters_mut()[param].data_mut()[index] += delta;
            };
            let mut plus = agent.clone();
            shift(&mut plus, h);
            let mut minus = agent.clone();
            shift(&mut minus, -h);
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let analytic = grads[param].data()[index];
            assert!((numeric - analytic).abs() < 1e-6 * (1.0 + numeric.abs()), "{numeric} vs {analytic}");
        }
    }

    #[test]
    fn heavy_regularization_pulls_the_actor_to_the_behavior_mode() {
        let spec = EnvKind::Pendulum.spec();
        let mut rng = stream(7, Stream::Analysis);
        let states: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..3).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect())
            .collect();
        let actions: Vec<Vec<f64>> = (0..400).map(|_| vec![1.2 + 0.05 * rand::Rng::sample::<f64, _>(&mut rng, StandardNormal)]).collect();
        let states = Tensor::from_rows(&states).unwrap();
        let density = train_gaussian_density_on(
            &states,
            &Tensor::from_rows(&actions).unwrap(),
            &spec.action_low,
            &spec.action_high,
            &GaussianDensityConfig {
                hidden: vec![16],
                iterations: 2000,
                ..GaussianDensityConfig::default()
            },
            7,
        )
        .unwrap();
        let config = SpotConfig {
            lambda: 100.0,
            actor_lr: 3e-3,
            ..small_config()
        };
        let mut agent = SpotAgent::new(&spec, DensityModel::Gaussian(density), None, &config, 7).unwrap();
        let mut b = batch(64, 7);
        b.states = Tensor::from_rows(&(0..64).map(|i| states.row_slice(i).to_vec()).collect::<Vec<_>>()).unwrap();
        for _ in 0..600 {
            agent.actor_update(&b, &ActorNoise::default()).unwrap();
        }
        let acted = agent.actor().actions(&b.states).unwrap();
        let mean = acted.mean();
        assert!((mean - 1.2).abs() < 0.1, "mean action {mean}");
    }

    #[test]
    fn polyak_update_is_exact() {
        let mut agent = agent(&small_config(), 8);
        perturb(&mut agent);
        let before = agent.clone();
        agent.soft_update_targets();
        let tau = agent.config().tau;
        let pairs = [
            (before.actor_target().network(), before.actor().network(), agent.actor_target().network()),
            (&before.critic_targets()[0], &before.critics()[0], &agent.critic_targets()[0]),
            (&before.critic_targets()[1], &before.critics()[1], &agent.critic_targets()[1]),
        ];
        for (old, online, new) in pairs {
            for ((o, w), n) in old.parameters().iter().zip(online.parameters()).zip(new.parameters()) {
                for ((&o, &w), &n) in o.data().iter().zip(w.data()).zip(n.data()) {
                    assert!((n - ((1.0 - tau) * o + tau * w)).abs() <= 1e-15);
                }
            }
        }
        assert_eq!(before.actor(), agent.actor());
        assert_eq!(before.critics(), agent.critics());
    }

    #[test]
    fn actor_updates_on_every_second_critic_update() {
        let mut agent = agent(&small_config(), 0);
        let mut rngs = UpdateRngs::new(0);
        let b = batch(16, 0);
        let pattern: Vec<bool> = (0..6)
            .map(|_| agent.train_step(&b, &mut rngs).unwrap().actor.is_some())
            .collect();
        assert_eq!(pattern, [false, true, false, true, false, true]);
        assert_eq!(agent.critic_updates(), 6);
    }

    #[test]
    fn untrained_agent_equals_its_initialization() {
        let data = generate(EnvKind::Pendulum, Regime::Medium, 100, 0).unwrap();
        let config = SpotConfig {
            steps: 0,
            ..small_config()
        };
        let (trained, log) = super::super::train_offline(&data, gaussian(3), &config, 11).unwrap();
        let fresh = SpotAgent::new(&EnvKind::Pendulum.spec(), gaussian(3), data.normalization.clone(), &config, 11).unwrap();
        assert_eq!(trained, fresh);
        assert!(log.steps.is_empty() && log.evals.is_empty());
    }

    #[test]
    fn checkpoint_round_trip_preserves_networks() {
        let mut agent = agent(&small_config(), 12);
        let mut rngs = UpdateRngs::new(12);
        let b = batch(16, 12);
        for _ in 0..3 {
            agent.train_step(&b, &mut rngs).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.ckpt");
        agent.save(&path).unwrap();
        let loaded = SpotAgent::load(&path, &small_config()).unwrap();
        assert_eq!(loaded.named_tensors(), agent.named_tensors());
        assert_eq!(loaded.critic_updates(), 3);
    }

    #[test]
    fn mismatched_batch_is_a_dimension_error() {
        let agent = agent(&small_config(), 0);
        let mut b = batch(4, 0);
        b.actions = Tensor::zeros(vec![4, 2]);
        let noise = Tensor::zeros(vec![4, 1]);
        assert!(matches!(agent.critic_target(&b, &noise), Err(Error::Dimension(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn replayed_updates_are_bitwise_identical(seed in 0u64..1000, steps in 1usize..6) {
            let run = || {
                let mut agent = agent(&small_config(), seed);
                let mut rngs = UpdateRngs::new(seed);
                let mut batches = stream(seed, Stream::Minibatch);
                let data = generate(EnvKind::Pendulum, Regime::Medium, 64, seed).unwrap();
                let outcomes: Vec<UpdateOutcome> = (0..steps)
                    .map(|_| {
                        let b = data.sample_minibatch(8, &mut batches).unwrap();
                        agent.train_step(&b, &mut rngs).unwrap()
                    })
                    .collect();
                (agent, outcomes)
            };
            prop_assert_eq!(run(), run());
        }

        #[test]
        fn normalizer_is_positive_and_scale_equivariant(
            q in prop::collection::vec(-100.0f64..100.0, 1..20),
            c in 0.1f64..10.0,
        ) {
            let alpha = normalizer(&q, true);
            prop_assert!(alpha >= NORMALIZER_FLOOR);
            let scaled: Vec<f64> = q.iter().map(|v| v * c).collect();
            let beta = normalizer(&scaled, true);
            if alpha > 1e-6 {
                prop_assert!((beta - c * alpha).abs() <= 1e-9 * beta.max(1.0));
            }
        }
    }
}
