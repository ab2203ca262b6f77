//! Small feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat vector: for each layer the weight matrix
//! (row-major, `out x in`) followed by its bias. Hidden layers use SiLU and
//! inverted dropout; the output layer is affine.

mod adam;
pub mod checkpoint;

pub use adam::{adam_step, OptimizerState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z * sigmoid(z),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    hidden_activation: Activation,
    dropout: f64,
    params: Vec<f64>,
    version: u64,
}

// the version counter only tracks cache freshness
impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.hidden_activation == other.hidden_activation
            && self.dropout == other.dropout
            && self.params == other.params
    }
}

/// Activations recorded by a forward pass for use by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    version: u64,
    /// Input to each layer (post-dropout for hidden layers).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Dropout multipliers (0 or 1/(1-rate)) per hidden layer; empty in eval.
    masks: Vec<Vec<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], dropout: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims, dropout)?;
        let mut offset = 0;
        for l in 0..net.num_layers() {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut net.params[offset..offset + fan_in * fan_out] {
                *w = rng.gen_range(-bound..=bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], dropout: f64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "network needs >= 2 positive layer widths, got {dims:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidInput(format!(
                "dropout rate must be in [0, 1), got {dropout}"
            )));
        }
        let n = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            dims: dims.to_vec(),
            hidden_activation: Activation::Silu,
            dropout,
            params: vec![0.0; n],
            version: 0,
        })
    }

    pub fn from_params(dims: &[usize], dropout: f64, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(dims, dropout)?;
        if params.len() != net.params.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidInput(format!("dropout rate {rate}")));
        }
        self.dropout = rate;
        Ok(())
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Mutable access invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let w = self.dims[..=l]
            .windows(2)
            .map(|d| d[0] * d[1] + d[1])
            .sum::<usize>();
        (w, w + self.dims[l] * self.dims[l + 1])
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Cache)> {
        if x.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut masks = Vec::new();
        let mut a = x.to_vec();
        for l in 0..layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let w = &self.params[w_off..w_off + n_in * n_out];
            let b = &self.params[b_off..b_off + n_out];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            inputs.push(std::mem::take(&mut a));
            if l + 1 == layers {
                a = z;
            } else {
                let mut h: Vec<f64> = z.iter().map(|&v| self.hidden_activation.apply(v)).collect();
                if mode == Mode::Train && self.dropout > 0.0 {
                    let scale = 1.0 / (1.0 - self.dropout);
                    let mask: Vec<f64> = (0..n_out)
                        .map(|_| if rng.gen::<f64>() < self.dropout { 0.0 } else { scale })
                        .collect();
                    for (hi, m) in h.iter_mut().zip(&mask) {
                        *hi *= m;
                    }
                    masks.push(mask);
                }
                pre.push(z);
                a = h;
            }
        }
        Ok((
            a,
            Cache {
                version: self.version,
                inputs,
                pre,
                masks,
            },
        ))
    }

    /// Eval-mode forward without a cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        // eval mode never touches the rng
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        Ok(self.forward(x, Mode::Eval, &mut rng)?.0)
    }

    /// Returns parameter gradients (flat, same layout as the parameters) and
    /// the gradient with respect to the network input.
    pub fn backward(&self, cache: &Cache, grad_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if cache.version != self.version || cache.inputs.len() != self.num_layers() {
            return Err(Error::ContractViolation(
                "activation cache does not belong to the current parameters".into(),
            ));
        }
        if grad_out.len() != self.output_dim() {
            return Err(Error::InvalidInput(format!(
                "output gradient has {} entries, expected {}",
                grad_out.len(),
                self.output_dim()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut g = grad_out.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let a = &cache.inputs[l];
            for o in 0..n_out {
                let go = g[o];
                grads[b_off + o] += go;
                if go != 0.0 {
                    let row = &mut grads[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for (gw, ai) in row.iter_mut().zip(a) {
                        *gw += go * ai;
                    }
                }
            }
            let w = &self.params[w_off..w_off + n_in * n_out];
            let mut g_in = vec![0.0; n_in];
            for o in 0..n_out {
                let go = g[o];
                if go != 0.0 {
                    for (gi, wi) in g_in.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *gi += go * wi;
                    }
                }
            }
            if l > 0 {
                let hidden = l - 1;
                if let Some(mask) = cache.masks.get(hidden) {
                    for (gi, m) in g_in.iter_mut().zip(mask) {
                        *gi *= m;
                    }
                }
                for (gi, z) in g_in.iter_mut().zip(&cache.pre[hidden]) {
                    *gi *= self.hidden_activation.derivative(*z);
                }
            }
            g = g_in;
        }
        Ok((grads, g))
    }
}
