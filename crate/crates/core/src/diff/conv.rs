use rand::Rng;

use super::tensor::gemm;
use super::{Module, Parameter, Tensor2};
use crate::error::{shape, Result};

/// Same-length 1D convolution (cross-correlation) with zero padding.
///
/// Inputs are `(in_channels, batch * frames)`: `batch` sequences of `frames`
/// samples stored side by side. Padding is applied per sequence, so no
/// information leaks across sequence boundaries.
#[derive(Clone, Debug)]
pub struct Conv1d {
    /// `(out_channels, in_channels * kernel)`, tap `k` of input channel `c`
    /// at column `c * kernel + k`.
    pub weight: Parameter,
    /// `(out_channels, 1)`
    pub bias: Parameter,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
}

/// Saved im2col buffer needed by the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache {
    cols: Tensor2,
    frames: usize,
}

impl Conv1d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(shape(format!("{name}: kernel size must be odd, got {kernel}")));
        }
        let fan_in = (in_channels * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let w: Vec<f64> = (0..out_channels * in_channels * kernel)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b: Vec<f64> = (0..out_channels)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Ok(Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                Tensor2::from_vec(out_channels, in_channels * kernel, w)?,
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor2::from_vec(out_channels, 1, b)?),
            in_channels,
            out_channels,
            kernel,
        })
    }

    /// Builds a layer from explicit weights laid out `[out][in][tap]`.
    pub fn from_weights(name: &str, weights: Tensor2, bias: Vec<f64>, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 || weights.cols() % kernel != 0 || bias.len() != weights.rows() {
            return Err(shape(format!("{name}: inconsistent convolution weights")));
        }
        let out_channels = weights.rows();
        Ok(Self {
            in_channels: weights.cols() / kernel,
            out_channels,
            kernel,
            weight: Parameter::new(format!("{name}.weight"), weights),
            bias: Parameter::new(format!("{name}.bias"), Tensor2::from_vec(out_channels, 1, bias)?),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    fn im2col(&self, input: &Tensor2, frames: usize) -> Tensor2 {
        let total = input.cols();
        let half = (self.kernel / 2) as isize;
        let mut cols = Tensor2::zeros(self.in_channels * self.kernel, total);
        for c in 0..self.in_channels {
            let src = input.row(c);
            for k in 0..self.kernel {
                let shift = k as isize - half;
                let dst = cols.row_mut(c * self.kernel + k);
                for seg in (0..total).step_by(frames) {
                    let s = &src[seg..seg + frames];
                    let d = &mut dst[seg..seg + frames];
                    // d[t] = s[t + shift] where in range
                    let lo = (-shift).max(0) as usize;
                    let hi = (frames as isize - shift).min(frames as isize).max(0) as usize;
                    if lo < hi {
                        let from = (lo as isize + shift) as usize;
                        d[lo..hi].copy_from_slice(&s[from..from + (hi - lo)]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Tensor2, frames: usize) -> Tensor2 {
        let total = cols.cols();
        let half = (self.kernel / 2) as isize;
        let mut out = Tensor2::zeros(self.in_channels, total);
        for c in 0..self.in_channels {
            for k in 0..self.kernel {
                let shift = k as isize - half;
                let src = cols.row(c * self.kernel + k);
                let dst = out.row_mut(c);
                for seg in (0..total).step_by(frames) {
                    let lo = (-shift).max(0) as usize;
                    let hi = (frames as isize - shift).min(frames as isize).max(0) as usize;
                    for t in lo..hi {
                        dst[seg + (t as isize + shift) as usize] += src[seg + t];
                    }
                }
            }
        }
        out
    }

    fn check_input(&self, input: &Tensor2, frames: usize) -> Result<()> {
        if input.rows() != self.in_channels {
            return Err(shape(format!(
                "{}: expected {} input channels, got {}",
                self.weight.name,
                self.in_channels,
                input.rows()
            )));
        }
        if frames == 0 || input.cols() % frames != 0 {
            return Err(shape(format!(
                "{}: {} columns is not a whole number of {frames}-frame sequences",
                self.weight.name,
                input.cols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor2, frames: usize) -> Result<(Tensor2, ConvCache)> {
        self.check_input(input, frames)?;
        let cols = if self.kernel == 1 {
            input.clone()
        } else {
            self.im2col(input, frames)
        };
        let total = input.cols();
        let mut out = Tensor2::zeros(self.out_channels, total);
        for o in 0..self.out_channels {
            let b = self.bias.value.data()[o];
            out.row_mut(o).fill(b);
        }
        gemm(
            self.out_channels,
            self.in_channels * self.kernel,
            total,
            1.0,
            self.weight.value.data(),
            false,
            cols.data(),
            false,
            1.0,
            out.data_mut(),
        );
        Ok((out, ConvCache { cols, frames }))
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(
        &mut self,
        cache: &ConvCache,
        grad_out: &Tensor2,
        need_input_grad: bool,
    ) -> Option<Tensor2> {
        let total = grad_out.cols();
        let ck = self.in_channels * self.kernel;
        gemm(
            self.out_channels,
            total,
            ck,
            1.0,
            grad_out.data(),
            false,
            cache.cols.data(),
            true,
            1.0,
            self.weight.grad.data_mut(),
        );
        for o in 0..self.out_channels {
            self.bias.grad.data_mut()[o] += grad_out.row(o).iter().sum::<f64>();
        }
        if !need_input_grad {
            return None;
        }
        let mut dcols = Tensor2::zeros(ck, total);
        gemm(
            ck,
            self.out_channels,
            total,
            1.0,
            self.weight.value.data(),
            true,
            grad_out.data(),
            false,
            0.0,
            dcols.data_mut(),
        );
        if self.kernel == 1 {
            Some(dcols)
        } else {
            Some(self.col2im(&dcols, cache.frames))
        }
    }
}

impl Module for Conv1d {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
