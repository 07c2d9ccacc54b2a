use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Fully connected network. `weights[i]` has shape `[widths[i], widths[i + 1]]`
/// and `biases[i]` has shape `[1, widths[i + 1]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    hidden: Activation,
    output: Activation,
}

/// An [`Mlp`] whose parameters have been registered in a [`Graph`].
#[derive(Clone, Debug)]
pub struct BoundMlp {
    params: Vec<Var>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn new(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let b = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            weights.push(Tensor::matrix(fan_in, fan_out, w)?);
            biases.push(Tensor::matrix(1, fan_out, b)?);
        }
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
            hidden,
            output,
        })
    }

    /// Rebuilds a network from `(weight, bias)` pairs, checking that shapes compose.
    pub fn from_parameters(
        layers: Vec<(Tensor, Tensor)>,
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        let mut widths = Vec::new();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (w, b) in layers {
            if w.rank() != 2 || b.shape() != [1, w.cols()] {
                return Err(Error::shape("Mlp layer", w.shape(), b.shape()));
            }
            match widths.last() {
                None => widths.push(w.rows()),
                Some(&prev) if prev != w.rows() => {
                    return Err(Error::shape("Mlp layer chain", &[prev], w.shape()))
                }
                Some(_) => {}
            }
            widths.push(w.cols());
            weights.push(w);
            biases.push(b);
        }
        if weights.is_empty() {
            return Err(Error::Config("network without layers".into()));
        }
        Ok(Self {
            widths,
            weights,
            biases,
            hidden,
            output,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    /// Parameters in `w0, b0, w1, b1, ...` order.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundMlp> {
        let params = self
            .parameters()
            .into_iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect::<Result<_>>()?;
        Ok(BoundMlp {
            params,
            hidden: self.hidden,
            output: self.output,
        })
    }

    /// Forward pass on a constant input, discarding the graph.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false)?;
        let x = g.constant(input.clone())?;
        let y = bound.forward(&mut g, x, None)?;
        Ok(g.value(y).clone())
    }

    /// `self <- tau * online + (1 - tau) * self`, parameter by parameter.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.parameters_mut().into_iter().zip(online.parameters()) {
            for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
                *tv = tau * ov + (1.0 - tau) * *tv;
            }
        }
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.weights
            .iter()
            .zip(&self.biases)
            .enumerate()
            .flat_map(|(i, (w, b))| {
                [
                    (format!("{prefix}.l{i}.weight"), w.clone()),
                    (format!("{prefix}.l{i}.bias"), b.clone()),
                ]
            })
            .collect()
    }

    pub fn from_named(
        tensors: &[(String, Tensor)],
        prefix: &str,
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        let find = |name: String| {
            tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.clone())
        };
        let mut layers = Vec::new();
        for i in 0.. {
            match (
                find(format!("{prefix}.l{i}.weight")),
                find(format!("{prefix}.l{i}.bias")),
            ) {
                (Some(w), Some(b)) => layers.push((w, b)),
                (None, None) => break,
                _ => return Err(Error::Format(format!("incomplete layer {prefix}.l{i}"))),
            }
        }
        if layers.is_empty() {
            return Err(Error::Format(format!("no tensors for network '{prefix}'")));
        }
        Self::from_parameters(layers, hidden, output)
    }
}

impl BoundMlp {
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    /// `dropout` holds one mask per hidden layer (already scaled by
    /// `1 / (1 - p)`), multiplied in after the hidden activation.
    pub fn forward(&self, g: &mut Graph, x: Var, dropout: Option<&[Tensor]>) -> Result<Var> {
        let layers = self.params.len() / 2;
        let mut h = x;
        for i in 0..layers {
            h = g.matmul(h, self.params[2 * i])?;
            h = g.add(h, self.params[2 * i + 1])?;
            if i + 1 < layers {
                h = self.hidden.apply(g, h)?;
                if let Some(mask) = dropout.and_then(|m| m.get(i)) {
                    let m = g.constant(mask.clone())?;
                    h = g.mul(h, m)?;
                }
            } else {
                h = self.output.apply(g, h)?;
            }
        }
        Ok(h)
    }
}

/// Inverted-dropout masks for the hidden layers of `net` on a batch of `rows`.
pub fn dropout_masks(net: &Mlp, rows: usize, p: f64, rng: &mut impl Rng) -> Vec<Tensor> {
    let hidden = &net.widths()[1..net.widths().len() - 1];
    let keep = 1.0 / (1.0 - p);
    hidden
        .iter()
        .map(|&w| {
            let data = (0..rows * w)
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            Tensor::matrix(rows, w, data).expect("mask shape")
        })
        .collect()
}
