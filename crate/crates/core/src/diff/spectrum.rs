use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};

/// Power spectrum of a real signal of fixed length `T`.
///
/// `powers[k] = |X_k|²` with the unnormalized forward transform
/// `X_k = Σ_n x_n e^{-2πikn/T}` for `k = 0..=T/2`. Under this convention
/// Parseval reads `Σ x_n² = (P_0 + 2 Σ_{0<k<T/2} P_k + [T even] P_{T/2}) / T`.
#[derive(Clone)]
pub struct PowerSpectrum {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

/// Forward values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct SpectrumCache {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl std::fmt::Debug for PowerSpectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PowerSpectrum").field("len", &self.len).finish()
    }
}

impl PowerSpectrum {
    pub fn new(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(invalid(format!("power spectrum needs at least 2 samples, got {len}")));
        }
        let fft = FftPlanner::new().plan_fft_forward(len);
        let (cos, sin) = (0..len)
            .map(|n| {
                let a = 2.0 * PI * n as f64 / len as f64;
                (a.cos(), a.sin())
            })
            .unzip();
        Ok(Self { len, fft, cos, sin })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bins(&self) -> usize {
        self.len / 2 + 1
    }

    /// Centre frequency of every bin in Hz for a frame time `dt`.
    pub fn bin_frequencies(&self, dt: f64) -> Vec<f64> {
        (0..self.bins())
            .map(|k| k as f64 / (self.len as f64 * dt))
            .collect()
    }

    pub fn forward(&self, signal: &[f64]) -> Result<(Vec<f64>, SpectrumCache)> {
        if signal.len() != self.len {
            return Err(invalid(format!(
                "power spectrum planned for {} samples, got {}",
                self.len,
                signal.len()
            )));
        }
        let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        let bins = self.bins();
        let re: Vec<f64> = buf[..bins].iter().map(|c| c.re).collect();
        let im: Vec<f64> = buf[..bins].iter().map(|c| c.im).collect();
        let powers = re.iter().zip(&im).map(|(r, i)| r * r + i * i).collect();
        Ok((powers, SpectrumCache { re, im }))
    }

    pub fn powers(&self, signal: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(signal)?.0)
    }

    /// Gradient with respect to the signal given gradients on every power bin.
    ///
    /// `∂P_k/∂x_n = 2 (Re X_k cos θ_kn − Im X_k sin θ_kn)`, `θ_kn = 2πkn/T`.
    pub fn backward(&self, cache: &SpectrumCache, grad_powers: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.len];
        for (k, &gp) in grad_powers.iter().enumerate() {
            if gp == 0.0 {
                continue;
            }
            let (re, im) = (2.0 * gp * cache.re[k], 2.0 * gp * cache.im[k]);
            let mut idx = 0usize;
            for gn in g.iter_mut() {
                *gn += re * self.cos[idx] - im * self.sin[idx];
                idx += k;
                if idx >= self.len {
                    idx -= self.len;
                }
            }
        }
        g
    }
}

/// Convenience wrapper for one-off power spectra.
pub fn fft_power(signal: &[f64]) -> Result<Vec<f64>> {
    PowerSpectrum::new(signal.len())?.powers(signal)
}
