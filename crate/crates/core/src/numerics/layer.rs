//! Dense layers and feed-forward stacks with exact reverse-mode gradients.
//!
//! A layer computes `y = act(x · W + b)` with `W` stored `in × out`. A forward pass
//! returns a [`Tape`] holding every layer's input and output, which is all the
//! backward pass needs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::config("layer dims must be > 0"));
        }
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Ok(Self {
            weight: Matrix::from_vec(fan_in, fan_out, data)?,
            bias: vec![0.0; fan_out],
            activation,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, input: &Matrix) -> Matrix {
        let mut z = input.matmul(&self.weight);
        let act = self.activation;
        let width = self.out_dim();
        for row in z.as_mut_slice().chunks_exact_mut(width) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v = act.apply(*v + b);
            }
        }
        z
    }
}

/// Activation record of one [`Mlp::forward`] call.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `values[0]` is the network input, `values[i + 1]` the output of layer `i`.
    values: Vec<Matrix>,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        self.values.last().expect("tape always holds the input")
    }

    pub fn input(&self) -> &Matrix {
        &self.values[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// A feed-forward stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Builds a stack with widths `dims[0] → dims[1] → …`; hidden layers use `hidden`,
    /// the last layer uses `output`.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("an MLP needs at least one layer"));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::glorot(dims[i], dims[i + 1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("an MLP needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::config(format!(
                    "layer widths do not chain: {} -> {}",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, Tape)> {
        if input.cols() != self.in_dim() {
            return Err(Error::config(format!(
                "input has {} columns, network expects {}",
                input.cols(),
                self.in_dim()
            )));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.clone());
        for layer in &self.layers {
            let next = layer.forward(values.last().unwrap());
            values.push(next);
        }
        let tape = Tape { values };
        Ok((tape.output().clone(), tape))
    }

    /// Output only; no tape is retained.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_dim() {
            return Err(Error::config(format!(
                "input has {} columns, network expects {}",
                input.cols(),
                self.in_dim()
            )));
        }
        let mut cur = self.layers[0].forward(input);
        for layer in &self.layers[1..] {
            cur = layer.forward(&cur);
        }
        Ok(cur)
    }

    /// Returns per-layer parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, tape: &Tape, output_grad: &Matrix) -> Result<(Vec<LayerGrad>, Matrix)> {
        if tape.values.len() != self.layers.len() + 1 {
            return Err(Error::internal("tape does not match network depth"));
        }
        if output_grad.shape() != tape.output().shape() {
            return Err(Error::internal(format!(
                "output gradient {:?} does not match forward output {:?}",
                output_grad.shape(),
                tape.output().shape()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &tape.values[i + 1];
            let input = &tape.values[i];
            if input.cols() != layer.in_dim() || out.cols() != layer.out_dim() {
                return Err(Error::internal("stale tape"));
            }
            let act = layer.activation;
            // dZ = dY ⊙ act'(Z), written in terms of Y
            for (g, &y) in upstream.as_mut_slice().iter_mut().zip(out.as_slice()) {
                *g *= act.derivative_from_output(y);
            }
            let weight = input.t_matmul(&upstream);
            let bias = upstream.col_sums();
            let next = upstream.matmul_t(&layer.weight);
            grads.push(LayerGrad { weight, bias });
            upstream = next;
        }
        grads.reverse();
        Ok((grads, upstream))
    }

    pub fn zero_grads(&self) -> Vec<LayerGrad> {
        self.layers
            .iter()
            .map(|l| LayerGrad {
                weight: Matrix::zeros(l.in_dim(), l.out_dim()),
                bias: vec![0.0; l.out_dim()],
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

/// Adds `src` into `dst` layer by layer.
pub fn accumulate_grads(dst: &mut [LayerGrad], src: &[LayerGrad]) {
    for (d, s) in dst.iter_mut().zip(src) {
        d.weight.add_assign(&s.weight);
        for (a, b) in d.bias.iter_mut().zip(&s.bias) {
            *a += b;
        }
    }
}

pub fn grad_slices(grads: &[LayerGrad]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(grads.len() * 2);
    for g in grads {
        out.push(g.weight.as_slice());
        out.push(g.bias.as_slice());
    }
    out
}
