use rand::Rng;

use crate::codebook::{vq_loss_with, Codebook, QuantizeResult, VqNorm};
use crate::diff::{
    avg_pool_time, avg_pool_time_backward, Activation, Conv1d, ConvCache, Mlp, MlpCache, Module, Parameter,
    PowerSpectrum, SpectrumCache, Tensor2,
};
use crate::error::{invalid, shape, Result};
use crate::manifold::{
    embed, embed_backward, extrapolate, phase_from_signal_with_grad, FrequencyCache, FrequencyHead,
    PhaseGradient,
};
use crate::motion::relative_timing;

/// Architecture hyperparameters of one autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Input channels `J`.
    pub channels: usize,
    /// Intermediate channels `C`.
    pub hidden: usize,
    /// Manifold dimension `d`; amplitudes have `2d` values.
    pub embedding_dim: usize,
    pub kernel: usize,
    /// Window length `T` (odd).
    pub window_len: usize,
    pub framerate: f64,
    /// Output-layer gain of the frequency head at initialization.
    pub head_sharpness: f64,
}

impl ModelConfig {
    pub fn new(channels: usize, embedding_dim: usize, window_len: usize, framerate: f64) -> Self {
        Self {
            channels,
            hidden: default_hidden(channels),
            embedding_dim,
            kernel: 23,
            window_len,
            framerate,
            head_sharpness: 25.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 || self.embedding_dim == 0 {
            return Err(invalid("channel counts and embedding dimension must be positive"));
        }
        if self.kernel % 2 == 0 || self.window_len % 2 == 0 || self.window_len < 3 {
            return Err(invalid(format!(
                "kernel ({}) and window length ({}) must be odd, window ≥ 3",
                self.kernel, self.window_len
            )));
        }
        if !(self.framerate.is_finite() && self.framerate > 0.0) {
            return Err(invalid("framerate must be positive"));
        }
        Ok(())
    }
}

/// `max(64, 2J)`.
pub fn default_hidden(channels: usize) -> usize {
    64.max(2 * channels)
}

/// One vector-quantized periodic autoencoder bound to a dataset id. The
/// codebook lives outside so several autoencoders can share it.
#[derive(Clone, Debug)]
pub struct VqPae {
    pub id: String,
    pub config: ModelConfig,
    pub enc1: Conv1d,
    pub enc2: Conv1d,
    pub timing_conv: Conv1d,
    pub head: FrequencyHead,
    pub amp: Mlp,
    pub dec1: Conv1d,
    pub dec2: Conv1d,
    /// Per-channel feature statistics used to normalize inputs.
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    spectrum: PowerSpectrum,
    bin_frequencies: Vec<f64>,
    timing: Vec<f64>,
    /// Phase is read with time running backwards so that it advances with
    /// the window position; see [`VqPae::encode_batch`].
    mirrored: Vec<f64>,
}

/// Encoder outputs for a batch of windows.
#[derive(Clone, Debug)]
pub struct EncodeOutput {
    pub phase: Vec<f64>,
    pub frequency: Vec<f64>,
    pub degenerate: Vec<bool>,
    /// Raw amplitudes `Ã`, `2d × B`.
    pub raw: Tensor2,
    pub quantized: Vec<QuantizeResult>,
}

impl EncodeOutput {
    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }
}

/// Forward values needed by [`VqPae::backward`].
pub struct ForwardCache {
    batch: usize,
    c1: ConvCache,
    pre1: Tensor2,
    c2: ConvCache,
    pre2: Tensor2,
    ct: ConvCache,
    spectra: Vec<SpectrumCache>,
    heads: Vec<FrequencyCache>,
    phase_grads: Vec<PhaseGradient>,
    amp: MlpCache,
    phases: Vec<Vec<f64>>,
    d1: ConvCache,
    pre_d1: Tensor2,
    d2: ConvCache,
    residual: Tensor2,
}

/// Reconstruction and losses for a batch.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub encoded: EncodeOutput,
    /// Normalized-space reconstruction, `J × B·T`.
    pub reconstruction: Tensor2,
    /// `‖X_b − X̃_b‖₂` per window.
    pub rec_loss: Vec<f64>,
    /// `‖sg(Ã) − A‖ + β‖Ã − sg(A)‖` per window.
    pub vq_loss: Vec<f64>,
    /// Batch mean of `rec + λ_vq · vq`.
    pub loss: f64,
}

impl ForwardOutput {
    pub fn mean_rec(&self) -> f64 {
        self.rec_loss.iter().sum::<f64>() / self.rec_loss.len() as f64
    }

    pub fn mean_vq(&self) -> f64 {
        self.vq_loss.iter().sum::<f64>() / self.vq_loss.len() as f64
    }
}

/// Weights of the VQ terms in the total loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_vq: f64,
    pub commitment: f64,
    pub norm: VqNorm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_vq: 1.0,
            commitment: crate::codebook::DEFAULT_COMMITMENT,
            norm: VqNorm::default(),
        }
    }
}

impl VqPae {
    pub fn new(id: &str, config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let ModelConfig {
            channels: j,
            hidden: c,
            embedding_dim: d,
            kernel: k,
            window_len: t,
            ..
        } = config;
        let spectrum = PowerSpectrum::new(t)?;
        let bins = spectrum.bins();
        let amp_sizes = [c, 2 * d, 2 * d, 2 * d, 2 * d, 2 * d];
        Ok(Self {
            id: id.to_string(),
            enc1: Conv1d::new("enc1", j, c, k, rng)?,
            enc2: Conv1d::new("enc2", c, c, k, rng)?,
            timing_conv: Conv1d::new("timing", c, 1, 1, rng)?,
            head: FrequencyHead::new("head", bins, config.head_sharpness, rng)?,
            amp: Mlp::new("amp", &amp_sizes, Activation::LeakyRelu(0.2), rng)?,
            dec1: Conv1d::new("dec1", d, c, k, rng)?,
            dec2: Conv1d::new("dec2", c, j, k, rng)?,
            norm_mean: vec![0.0; j],
            norm_std: vec![1.0; j],
            bin_frequencies: spectrum.bin_frequencies(1.0 / config.framerate),
            timing: relative_timing(t, 1.0 / config.framerate),
            mirrored: relative_timing(t, 1.0 / config.framerate).iter().map(|v| -v).collect(),
            spectrum,
            config,
        })
    }

    pub fn window_len(&self) -> usize {
        self.config.window_len
    }

    pub fn timing(&self) -> &[f64] {
        &self.timing
    }

    pub fn bin_frequencies(&self) -> &[f64] {
        &self.bin_frequencies
    }

    /// Maps raw features into the normalized space in place (rows are
    /// channels).
    pub fn normalize(&self, x: &mut Tensor2) {
        for r in 0..x.rows() {
            let (m, s) = (self.norm_mean[r], self.norm_std[r]);
            for v in x.row_mut(r) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn denormalize(&self, x: &mut Tensor2) {
        for r in 0..x.rows() {
            let (m, s) = (self.norm_mean[r], self.norm_std[r]);
            for v in x.row_mut(r) {
                *v = *v * s + m;
            }
        }
    }

    fn check_batch(&self, x: &Tensor2) -> Result<usize> {
        let t = self.window_len();
        if x.rows() != self.config.channels || x.cols() == 0 || x.cols() % t != 0 {
            return Err(shape(format!(
                "{}: expected {} channels and a multiple of {t} frames, got {:?}",
                self.id,
                self.config.channels,
                x.shape()
            )));
        }
        Ok(x.cols() / t)
    }

    /// Encodes a batch of normalized windows laid out as `J × B·T`.
    ///
    /// The phase projections use mirrored timing `−t_i`. With the literal
    /// timing, a component `cos 2π(f t + c)` yields phase `−c`, which runs
    /// against the extrapolation `φ + f t`; mirroring yields `+c`.
    /// `frozen` pins the codebook indices (used for gradient checks).
    pub fn encode_batch(
        &self,
        codebook: &Codebook,
        x: &Tensor2,
        frozen: Option<&[usize]>,
    ) -> Result<(EncodeOutput, EncodeState)> {
        let b = self.check_batch(x)?;
        let t = self.window_len();
        if codebook.width() != 2 * self.config.embedding_dim {
            return Err(shape(format!(
                "codebook width {} does not match 2d = {}",
                codebook.width(),
                2 * self.config.embedding_dim
            )));
        }
        let elu = Activation::Elu;
        let (pre1, c1) = self.enc1.forward(x, t)?;
        let h1 = elu.forward(&pre1);
        let (pre2, c2) = self.enc2.forward(&h1, t)?;
        let h = elu.forward(&pre2);
        let (y, ct) = self.timing_conv.forward(&h, t)?;
        let mut out = EncodeOutput {
            phase: Vec::with_capacity(b),
            frequency: Vec::with_capacity(b),
            degenerate: Vec::with_capacity(b),
            raw: Tensor2::zeros(0, 0),
            quantized: Vec::with_capacity(b),
        };
        let mut spectra = Vec::with_capacity(b);
        let mut heads = Vec::with_capacity(b);
        let mut phase_grads = Vec::with_capacity(b);
        for w in 0..b {
            let yw = &y.data()[w * t..(w + 1) * t];
            let (powers, sc) = self.spectrum.forward(yw)?;
            let (f, hc) = self.head.forward(&powers, &self.bin_frequencies)?;
            let (est, pg) = phase_from_signal_with_grad(yw, f, &self.mirrored)?;
            out.phase.push(est.phase);
            out.frequency.push(f);
            out.degenerate.push(est.degenerate);
            spectra.push(sc);
            heads.push(hc);
            phase_grads.push(pg);
        }
        let pooled = avg_pool_time(&h, t)?;
        let (raw, amp) = self.amp.forward(&pooled)?;
        for w in 0..b {
            let r = raw.column(w);
            let q = match frozen {
                Some(idx) => {
                    let k = *idx
                        .get(w)
                        .ok_or_else(|| invalid("frozen index list is shorter than the batch"))?;
                    let e = codebook.entry(k).to_vec();
                    let residual = e.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    QuantizeResult {
                        index: k,
                        quantized: e,
                        raw: r,
                        residual,
                    }
                }
                None => codebook.quantize(&r),
            };
            out.quantized.push(q);
        }
        out.raw = raw;
        Ok((
            out,
            EncodeState {
                c1,
                pre1,
                c2,
                pre2,
                ct,
                spectra,
                heads,
                phase_grads,
                amp,
            },
        ))
    }

    /// Decodes embeddings `d × B·T` into normalized features `J × B·T`.
    pub fn decode(&self, p: &Tensor2) -> Result<Tensor2> {
        Ok(self.decode_with_cache(p)?.0)
    }

    fn decode_with_cache(&self, p: &Tensor2) -> Result<(Tensor2, ConvCache, Tensor2, ConvCache)> {
        if p.rows() != self.config.embedding_dim {
            return Err(shape(format!(
                "{}: decoder expects {} embedding rows, got {}",
                self.id,
                self.config.embedding_dim,
                p.rows()
            )));
        }
        let frames = if p.cols() % self.window_len() == 0 && p.cols() > 0 {
            self.window_len()
        } else {
            p.cols()
        };
        let (pre_d1, d1) = self.dec1.forward(p, frames)?;
        let hd = Activation::Elu.forward(&pre_d1);
        let (out, d2) = self.dec2.forward(&hd, frames)?;
        Ok((out, d1, pre_d1, d2))
    }

    /// Manifold embedding of every window: `P_b = Ψ(A_b, φ_b + f_b 𝒯)`.
    pub fn embedding_of(&self, enc: &EncodeOutput) -> (Tensor2, Vec<Vec<f64>>) {
        let t = self.window_len();
        let d = self.config.embedding_dim;
        let mut p = Tensor2::zeros(d, enc.len() * t);
        let mut phases = Vec::with_capacity(enc.len());
        for w in 0..enc.len() {
            let ph = extrapolate(enc.phase[w], enc.frequency[w], &self.timing);
            let pw = embed(&enc.quantized[w].quantized, &ph);
            for r in 0..d {
                p.row_mut(r)[w * t..(w + 1) * t].copy_from_slice(pw.row(r));
            }
            phases.push(ph);
        }
        (p, phases)
    }

    /// Full forward pass on normalized windows.
    pub fn forward(
        &self,
        codebook: &Codebook,
        x: &Tensor2,
        weights: LossWeights,
        frozen: Option<&[usize]>,
    ) -> Result<(ForwardOutput, ForwardCache)> {
        let (enc, st) = self.encode_batch(codebook, x, frozen)?;
        let b = enc.len();
        let t = self.window_len();
        let (p, phases) = self.embedding_of(&enc);
        let (recon, d1, pre_d1, d2) = self.decode_with_cache(&p)?;
        let mut residual = recon.clone();
        for (r, xv) in residual.data_mut().iter_mut().zip(x.data()) {
            *r -= xv;
        }
        let mut rec_loss = vec![0.0; b];
        for r in 0..residual.rows() {
            let row = residual.row(r);
            for (w, l) in rec_loss.iter_mut().enumerate() {
                *l += row[w * t..(w + 1) * t].iter().map(|v| v * v).sum::<f64>();
            }
        }
        rec_loss.iter_mut().for_each(|l| *l = l.sqrt());
        let vq: Vec<f64> = enc
            .quantized
            .iter()
            .map(|q| vq_loss_with(&q.raw, &q.quantized, weights.commitment, weights.norm).loss)
            .collect();
        let loss = rec_loss
            .iter()
            .zip(&vq)
            .map(|(r, v)| r + weights.lambda_vq * v)
            .sum::<f64>()
            / b as f64;
        let cache = ForwardCache {
            batch: b,
            c1: st.c1,
            pre1: st.pre1,
            c2: st.c2,
            pre2: st.pre2,
            ct: st.ct,
            spectra: st.spectra,
            heads: st.heads,
            phase_grads: st.phase_grads,
            amp: st.amp,
            phases,
            d1,
            pre_d1,
            d2,
            residual,
        };
        Ok((
            ForwardOutput {
                encoded: enc,
                reconstruction: recon,
                rec_loss,
                vq_loss: vq,
                loss,
            },
            cache,
        ))
    }

    /// Accumulates gradients of the batch-mean loss into this model's
    /// parameters and into the codebook entries.
    pub fn backward(
        &mut self,
        codebook: &mut Codebook,
        out: &ForwardOutput,
        cache: ForwardCache,
        weights: LossWeights,
    ) -> Result<()> {
        let b = cache.batch;
        let t = self.window_len();
        let d = self.config.embedding_dim;
        let inv_b = 1.0 / b as f64;
        let elu = Activation::Elu;

        let mut g_rec = cache.residual;
        for r in 0..g_rec.rows() {
            let row = g_rec.row_mut(r);
            for (w, &l) in out.rec_loss.iter().enumerate() {
                let s = if l > 0.0 { inv_b / l } else { 0.0 };
                row[w * t..(w + 1) * t].iter_mut().for_each(|v| *v *= s);
            }
        }
        let g_hd = self.dec2.backward(&cache.d2, &g_rec, true).expect("input grad requested");
        let mut g_hd = g_hd;
        elu.backward_in_place(&cache.pre_d1, &mut g_hd);
        let g_p = self.dec1.backward(&cache.d1, &g_hd, true).expect("input grad requested");

        let mut g_raw = Tensor2::zeros(2 * d, b);
        let mut g_y = vec![0.0; b * t];
        for w in 0..b {
            let q = &out.encoded.quantized[w];
            let gpw = g_p.columns(w * t, t);
            let (g_a, g_phi) = embed_backward(&q.quantized, &cache.phases[w], &gpw);
            let vq = vq_loss_with(&q.raw, &q.quantized, weights.commitment, weights.norm);
            // Straight-through: the decoder gradient on A reaches Ã unchanged.
            let col: Vec<f64> = g_a
                .iter()
                .zip(&vq.grad_raw)
                .map(|(ga, gc)| ga + weights.lambda_vq * inv_b * gc)
                .collect();
            g_raw.set_column(w, &col);
            let entry_grad = codebook.entries.grad.row_mut(q.index);
            for (e, g) in entry_grad.iter_mut().zip(&vq.grad_entry) {
                *e += weights.lambda_vq * inv_b * g;
            }

            let g_phase: f64 = g_phi.iter().sum();
            let mut g_freq: f64 = g_phi.iter().zip(&self.timing).map(|(g, ti)| g * ti).sum();
            let pg = &cache.phase_grads[w];
            g_freq += g_phase * pg.frequency;
            let yw = &mut g_y[w * t..(w + 1) * t];
            for (gy, ps) in yw.iter_mut().zip(&pg.signal) {
                *gy += g_phase * ps;
            }
            let g_pow = self.head.backward(&cache.heads[w], &self.bin_frequencies, g_freq);
            let g_sig = self.spectrum.backward(&cache.spectra[w], &g_pow);
            for (gy, gs) in yw.iter_mut().zip(&g_sig) {
                *gy += gs;
            }
        }
        let g_y = Tensor2::from_vec(1, b * t, g_y)?;
        let mut g_h = self.timing_conv.backward(&cache.ct, &g_y, true).expect("input grad requested");
        let g_pool = self.amp.backward(&cache.amp, &g_raw);
        g_h.add_assign(&avg_pool_time_backward(&g_pool, t));
        elu.backward_in_place(&cache.pre2, &mut g_h);
        let mut g_h1 = self.enc2.backward(&cache.c2, &g_h, true).expect("input grad requested");
        elu.backward_in_place(&cache.pre1, &mut g_h1);
        self.enc1.backward(&cache.c1, &g_h1, false);
        Ok(())
    }
}

/// Encoder intermediates; consumed by [`VqPae::forward`].
pub struct EncodeState {
    c1: ConvCache,
    pre1: Tensor2,
    c2: ConvCache,
    pre2: Tensor2,
    ct: ConvCache,
    spectra: Vec<SpectrumCache>,
    heads: Vec<FrequencyCache>,
    phase_grads: Vec<PhaseGradient>,
    amp: MlpCache,
}

impl Module for VqPae {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.enc1.visit_params(f);
        self.enc2.visit_params(f);
        self.timing_conv.visit_params(f);
        self.head.visit_params(f);
        self.amp.visit_params(f);
        self.dec1.visit_params(f);
        self.dec2.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.enc1.visit_params_mut(f);
        self.enc2.visit_params_mut(f);
        self.timing_conv.visit_params_mut(f);
        self.head.visit_params_mut(f);
        self.amp.visit_params_mut(f);
        self.dec1.visit_params_mut(f);
        self.dec2.visit_params_mut(f);
    }
}

impl VqPae {
    /// Clears every bias vector; used to probe zero propagation.
    pub fn zero_biases(&mut self) {
        self.visit_params_mut(&mut |p| {
            if p.name.ends_with(".bias") {
                p.value.fill(0.0);
            }
        });
    }
}
