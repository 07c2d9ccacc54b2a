use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers start at zero and are laid out
/// in the same order as the parameter list passed to [`Adam::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
            .unzip();
        Self { config, t: 0, m, v }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                &[params.len(), self.m.len()],
                &[grads.len()],
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::row(&[0.5, -1.0, 2.0]);
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::default(), [&p]);
        for _ in 0..5 {
            opt.step(&mut [&mut p], &[Tensor::zeros(vec![1, 3])]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_matches_hand_expansion() {
        // t=1: m = 0.1 g, v = 0.001 g^2; m_hat = g, v_hat = g^2.
        // With g = 1 the update is lr / (1 + eps).
        let cfg = AdamConfig::with_lr(0.1);
        let mut p = Tensor::scalar(3.0);
        let mut opt = Adam::new(cfg, [&p]);
        opt.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        let expected = 3.0 - 0.1 * (1.0 / (1.0 + cfg.eps));
        assert!((p.item() - expected).abs() < 1e-15, "{} vs {expected}", p.item());
    }

    #[test]
    fn identical_inputs_give_identical_updates() {
        let mut a = Tensor::row(&[1.0, 2.0]);
        let mut b = a.clone();
        let mut oa = Adam::new(AdamConfig::default(), [&a]);
        let mut ob = Adam::new(AdamConfig::default(), [&b]);
        let g = Tensor::row(&[0.3, -0.7]);
        for _ in 0..3 {
            oa.step(&mut [&mut a], std::slice::from_ref(&g)).unwrap();
            ob.step(&mut [&mut b], std::slice::from_ref(&g)).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::row(&[1.0, 2.0]);
        let mut opt = Adam::new(AdamConfig::default(), [&p]);
        let err = opt.step(&mut [&mut p], &[Tensor::row(&[1.0])]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }
}
