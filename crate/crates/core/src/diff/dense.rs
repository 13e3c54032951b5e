use rand::Rng;

use super::tensor::gemm;
use super::{Module, Parameter, Tensor2};
use crate::error::{shape, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    /// ELU with unit scale: `x` for `x > 0`, `exp(x) - 1` otherwise.
    Elu,
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }

    pub fn forward(self, pre: &Tensor2) -> Tensor2 {
        pre.map(|x| self.apply(x))
    }

    /// Multiplies `grad` in place by the derivative at `pre`.
    pub fn backward_in_place(self, pre: &Tensor2, grad: &mut Tensor2) {
        for (g, &x) in grad.data_mut().iter_mut().zip(pre.data()) {
            *g *= self.derivative(x);
        }
    }
}

/// Fully connected layer acting on column vectors: `Y = W X + b`, with a batch
/// stored as the columns of `X`.
#[derive(Clone, Debug)]
pub struct Linear {
    /// `(out, in)`
    pub weight: Parameter,
    /// `(out, 1)`
    pub bias: Parameter,
}

impl Linear {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect();
        let b = (0..outputs).map(|_| rng.random_range(-bound..bound)).collect();
        Self::from_weights(name, Tensor2::from_vec(outputs, inputs, w)?, b)
    }

    pub fn from_weights(name: &str, weight: Tensor2, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(shape(format!("{name}: bias length does not match output count")));
        }
        let out = weight.rows();
        Ok(Self {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::new(format!("{name}.bias"), Tensor2::from_vec(out, 1, bias)?),
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.rows() != self.inputs() {
            return Err(shape(format!(
                "{}: expected {} inputs, got {}",
                self.weight.name,
                self.inputs(),
                x.rows()
            )));
        }
        let n = x.cols();
        let mut out = Tensor2::zeros(self.outputs(), n);
        for o in 0..self.outputs() {
            out.row_mut(o).fill(self.bias.value.data()[o]);
        }
        gemm(
            self.outputs(),
            self.inputs(),
            n,
            1.0,
            self.weight.value.data(),
            false,
            x.data(),
            false,
            1.0,
            out.data_mut(),
        );
        Ok(out)
    }

    pub fn backward(&mut self, x: &Tensor2, grad_out: &Tensor2) -> Tensor2 {
        let (o, i, n) = (self.outputs(), self.inputs(), x.cols());
        gemm(o, n, i, 1.0, grad_out.data(), false, x.data(), true, 1.0, self.weight.grad.data_mut());
        for r in 0..o {
            self.bias.grad.data_mut()[r] += grad_out.row(r).iter().sum::<f64>();
        }
        let mut dx = Tensor2::zeros(i, n);
        gemm(i, o, n, 1.0, self.weight.value.data(), true, grad_out.data(), false, 0.0, dx.data_mut());
        dx
    }
}

impl Module for Linear {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Stack of affine layers with an activation between them; the last layer
/// is affine only.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Per-layer inputs and pre-activations saved for backpropagation.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Tensor2>,
    pre: Vec<Tensor2>,
}

impl Mlp {
    /// `sizes` lists the width of every layer boundary, input first, so
    /// `sizes.len() - 1` affine layers are created.
    pub fn new(name: &str, sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(shape(format!("{name}: an MLP needs at least one layer")));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Linear>, activation: Activation) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(shape("MLP layer sizes are not chain-consistent"));
            }
        }
        if layers.is_empty() {
            return Err(shape("an MLP needs at least one layer"));
        }
        Ok(Self { layers, activation })
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<(Tensor2, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h)?;
            inputs.push(h);
            h = if i == last {
                z.clone()
            } else {
                self.activation.forward(&z)
            };
            pre.push(z);
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    pub fn predict(&self, x: &Tensor2) -> Result<Tensor2> {
        Ok(self.forward(x)?.0)
    }

    pub fn backward(&mut self, cache: &MlpCache, grad_out: &Tensor2) -> Tensor2 {
        let last = self.layers.len() - 1;
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i != last {
                self.activation.backward_in_place(&cache.pre[i], &mut g);
            }
            g = self.layers[i].backward(&cache.inputs[i], &g);
        }
        g
    }
}

impl Module for Mlp {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        for l in &self.layers {
            l.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for l in &mut self.layers {
            l.visit_params_mut(f);
        }
    }
}

/// Per-row arithmetic mean over each `frames`-long sequence: `(C, B·T) -> (C, B)`.
pub fn avg_pool_time(input: &Tensor2, frames: usize) -> Result<Tensor2> {
    if frames == 0 || input.cols() % frames != 0 {
        return Err(shape("avg_pool_time: columns are not a whole number of sequences"));
    }
    let batch = input.cols() / frames;
    let mut out = Tensor2::zeros(input.rows(), batch);
    for r in 0..input.rows() {
        let row = input.row(r);
        for b in 0..batch {
            let s: f64 = row[b * frames..(b + 1) * frames].iter().sum();
            out.set(r, b, s / frames as f64);
        }
    }
    Ok(out)
}

/// Backward of [`avg_pool_time`]: spreads each pooled gradient evenly.
pub fn avg_pool_time_backward(grad: &Tensor2, frames: usize) -> Tensor2 {
    let mut out = Tensor2::zeros(grad.rows(), grad.cols() * frames);
    let inv = 1.0 / frames as f64;
    for r in 0..grad.rows() {
        let g = grad.row(r);
        let dst = out.row_mut(r);
        for (b, gb) in g.iter().enumerate() {
            dst[b * frames..(b + 1) * frames].fill(gb * inv);
        }
    }
    out
}
