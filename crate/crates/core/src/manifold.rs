//! The ellipse map, phase and frequency extraction, and phase tracks.
//!
//! An amplitude `A ∈ R^{2d}` splits into halves `A⁰` (first `d` entries) and
//! `A¹` (last `d`); `Ψ(A, φ) = A⁰ sin 2πφ + A¹ cos 2πφ` traces an ellipse in
//! `R^d` as the phase `φ` (in cycles) goes around once.

use std::f64::consts::TAU;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;

use crate::diff::checkpoint::{read_f64, read_str, read_u32, read_u64, write_str};
use crate::diff::ops::{softmax, softmax_expectation_backward};
use crate::diff::{Activation, Linear, Mlp, MlpCache, Module, Parameter, Tensor2};
use crate::error::{invalid, shape, Error, Result};

/// A point of the amplitude space, `2d` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Amplitude(pub Vec<f64>);

impl Amplitude {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() % 2 != 0 {
            return Err(shape(format!("amplitude dimension must be even and positive, got {}", values.len())));
        }
        Ok(Self(values))
    }

    /// Embedding dimension `d`.
    pub fn dim(&self) -> usize {
        self.0.len() / 2
    }

    pub fn a0(&self) -> &[f64] {
        &self.0[..self.dim()]
    }

    pub fn a1(&self) -> &[f64] {
        &self.0[self.dim()..]
    }
}

/// `Ψ(A, φ)` for a raw `2d` amplitude slice.
pub fn psi(a: &[f64], phase: f64) -> Vec<f64> {
    let d = a.len() / 2;
    let (s, c) = (TAU * phase).sin_cos();
    (0..d).map(|i| a[i] * s + a[d + i] * c).collect()
}

/// `Φ_i = φ + f · t_i`, left unwrapped.
pub fn extrapolate(phase: f64, frequency: f64, timing: &[f64]) -> Vec<f64> {
    timing.iter().map(|t| phase + frequency * t).collect()
}

/// `d × T` matrix whose column `i` is `Ψ(A, Φ_i)`.
pub fn embed(a: &[f64], phases: &[f64]) -> Tensor2 {
    let d = a.len() / 2;
    let mut p = Tensor2::zeros(d, phases.len());
    for (i, &ph) in phases.iter().enumerate() {
        let (s, c) = (TAU * ph).sin_cos();
        for r in 0..d {
            p.set(r, i, a[r] * s + a[d + r] * c);
        }
    }
    p
}

/// Gradients of a scalar loss through [`embed`] given `∂L/∂P`:
/// returns `(∂L/∂A, ∂L/∂Φ)`.
pub fn embed_backward(a: &[f64], phases: &[f64], grad_p: &Tensor2) -> (Vec<f64>, Vec<f64>) {
    let d = a.len() / 2;
    let mut ga = vec![0.0; 2 * d];
    let mut gphi = vec![0.0; phases.len()];
    for (i, &ph) in phases.iter().enumerate() {
        let (s, c) = (TAU * ph).sin_cos();
        let mut acc = 0.0;
        for r in 0..d {
            let g = grad_p.get(r, i);
            ga[r] += g * s;
            ga[d + r] += g * c;
            acc += g * (a[r] * c - a[d + r] * s);
        }
        gphi[i] = TAU * acc;
    }
    (ga, gphi)
}

/// Phase read off a timing signal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseEstimate {
    /// In `(-1/2, 1/2]`.
    pub phase: f64,
    /// Set when both projections vanish; the phase is then 0 by convention.
    pub degenerate: bool,
}

/// Gradients of the phase with respect to the signal and the frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseGradient {
    pub signal: Vec<f64>,
    pub frequency: f64,
}

fn projections(y: &[f64], f: f64, timing: &[f64]) -> (f64, f64) {
    y.iter().zip(timing).fold((0.0, 0.0), |(sx, sy), (&v, &t)| {
        let (s, c) = (TAU * f * t).sin_cos();
        (sx + v * c, sy + v * s)
    })
}

/// `φ = atan2(s_y, s_x) / 2π` with `s_x = Σ y_i cos 2πf t_i` and
/// `s_y = Σ y_i sin 2πf t_i`, mapped into `(-1/2, 1/2]`.
pub fn phase_from_signal(y: &[f64], f: f64, timing: &[f64]) -> Result<PhaseEstimate> {
    if y.len() < 2 || y.len() != timing.len() {
        return Err(invalid(format!(
            "phase needs at least 2 samples with matching timing, got {} and {}",
            y.len(),
            timing.len()
        )));
    }
    if !(f >= 0.0) {
        return Err(invalid(format!("frequency must be non-negative, got {f}")));
    }
    let (sx, sy) = projections(y, f, timing);
    Ok(phase_from_projections(sx, sy))
}

fn phase_from_projections(sx: f64, sy: f64) -> PhaseEstimate {
    if sx == 0.0 && sy == 0.0 {
        return PhaseEstimate {
            phase: 0.0,
            degenerate: true,
        };
    }
    let mut phase = sy.atan2(sx) / TAU;
    if phase <= -0.5 {
        phase = 0.5;
    }
    PhaseEstimate {
        phase,
        degenerate: false,
    }
}

/// [`phase_from_signal`] together with its analytic gradient. At the
/// degenerate point the gradient is zero.
pub fn phase_from_signal_with_grad(y: &[f64], f: f64, timing: &[f64]) -> Result<(PhaseEstimate, PhaseGradient)> {
    let est = phase_from_signal(y, f, timing)?;
    let n = y.len();
    if est.degenerate {
        return Ok((
            est,
            PhaseGradient {
                signal: vec![0.0; n],
                frequency: 0.0,
            },
        ));
    }
    let (sx, sy) = projections(y, f, timing);
    let r2 = sx * sx + sy * sy;
    let (dx, dy) = (-sy / (TAU * r2), sx / (TAU * r2));
    let mut signal = Vec::with_capacity(n);
    let (mut dsx_df, mut dsy_df) = (0.0, 0.0);
    for (&v, &t) in y.iter().zip(timing) {
        let (s, c) = (TAU * f * t).sin_cos();
        signal.push(dx * c + dy * s);
        dsx_df -= v * s * TAU * t;
        dsy_df += v * c * TAU * t;
    }
    Ok((
        est,
        PhaseGradient {
            signal,
            frequency: dx * dsx_df + dy * dsy_df,
        },
    ))
}

/// Frequency head: a 5-layer MLP over the non-DC power shares whose softmax
/// weights average the bin frequencies, so `f ∈ [0, Nyquist]`.
#[derive(Clone, Debug)]
pub struct FrequencyHead {
    pub mlp: Mlp,
}

/// Values saved by [`FrequencyHead::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct FrequencyCache {
    normalized: Vec<f64>,
    total: f64,
    mlp: MlpCache,
    weights: Vec<f64>,
}

impl FrequencyHead {
    pub const LAYERS: usize = 5;

    /// Hidden layers start close to the identity and the output layer at
    /// `sharpness · I` with the DC row cleared, so an untrained head already
    /// picks the strongest non-DC bin.
    pub fn new(name: &str, bins: usize, sharpness: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(Self::LAYERS);
        for l in 0..Self::LAYERS {
            let mut w = Tensor2::identity(bins);
            for v in w.data_mut() {
                *v += rng.random_range(-0.01..0.01);
            }
            if l + 1 == Self::LAYERS {
                w.scale(sharpness);
                w.row_mut(0).fill(0.0);
            }
            layers.push(Linear::from_weights(&format!("{name}.{l}"), w, vec![0.0; bins])?);
        }
        Ok(Self {
            mlp: Mlp::from_layers(layers, Activation::LeakyRelu(0.2))?,
        })
    }

    /// A head with all-zero weights: uniform softmax, mean bin frequency.
    pub fn zeros(name: &str, bins: usize) -> Result<Self> {
        let layers = (0..Self::LAYERS)
            .map(|l| Linear::from_weights(&format!("{name}.{l}"), Tensor2::zeros(bins, bins), vec![0.0; bins]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mlp: Mlp::from_layers(layers, Activation::LeakyRelu(0.2))?,
        })
    }

    pub fn bins(&self) -> usize {
        self.mlp.inputs()
    }

    pub fn logits(&self, powers: &[f64]) -> Result<Vec<f64>> {
        let (n, _) = normalize(powers);
        let x = Tensor2::from_vec(n.len(), 1, n)?;
        Ok(self.mlp.predict(&x)?.into_vec())
    }

    pub fn forward(&self, powers: &[f64], bin_frequencies: &[f64]) -> Result<(f64, FrequencyCache)> {
        if powers.len() != self.bins() || bin_frequencies.len() != self.bins() {
            return Err(shape(format!(
                "frequency head expects {} bins, got {} powers and {} frequencies",
                self.bins(),
                powers.len(),
                bin_frequencies.len()
            )));
        }
        let (normalized, total) = normalize(powers);
        let x = Tensor2::from_vec(normalized.len(), 1, normalized.clone())?;
        let (logits, mlp) = self.mlp.forward(&x)?;
        let weights = softmax(logits.data());
        let f = weights.iter().zip(bin_frequencies).map(|(w, b)| w * b).sum();
        Ok((
            f,
            FrequencyCache {
                normalized,
                total,
                mlp,
                weights,
            },
        ))
    }

    /// Accumulates head gradients and returns `∂L/∂powers`.
    pub fn backward(&mut self, cache: &FrequencyCache, bin_frequencies: &[f64], grad_f: f64) -> Vec<f64> {
        let gl = softmax_expectation_backward(&cache.weights, bin_frequencies, grad_f);
        let gl = Tensor2::from_vec(gl.len(), 1, gl).expect("bin count");
        let gn = self.mlp.backward(&cache.mlp, &gl).into_vec();
        if cache.total <= 0.0 {
            return vec![0.0; gn.len()];
        }
        let dot: f64 = gn.iter().zip(&cache.normalized).map(|(g, n)| g * n).sum();
        let mut out: Vec<f64> = gn.iter().map(|g| (g - dot) / cache.total).collect();
        if let Some(dc) = out.first_mut() {
            *dc = 0.0;
        }
        out
    }
}

impl Module for FrequencyHead {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.mlp.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.mlp.visit_params_mut(f)
    }
}

/// Shares of the non-DC power; the DC entry is reported as 0 so a constant
/// offset in the timing signal cannot flatten the spectrum the head sees.
fn normalize(powers: &[f64]) -> (Vec<f64>, f64) {
    let total: f64 = powers.iter().skip(1).sum();
    let mut out = vec![0.0; powers.len()];
    if total > 0.0 {
        for (o, p) in out.iter_mut().zip(powers).skip(1) {
            *o = p / total;
        }
        (out, total)
    } else {
        (out, 0.0)
    }
}

/// `f = Σ_k softmax(head(powers))_k · bin_frequencies_k`.
pub fn frequency_from_powers(powers: &[f64], bin_frequencies: &[f64], head: &FrequencyHead) -> Result<f64> {
    Ok(head.forward(powers, bin_frequencies)?.0)
}

/// Removes jumps larger than half a cycle from a wrapped phase sequence.
pub fn unwrap_phase(wrapped: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(wrapped.len());
    let mut offset = 0.0;
    for (i, &p) in wrapped.iter().enumerate() {
        if i > 0 {
            let step = p - wrapped[i - 1];
            offset -= step.round();
        }
        out.push(p + offset);
    }
    out
}

/// One frame of a phase track.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub phase: f64,
    pub frequency: f64,
    pub amplitude_index: usize,
    /// `Ψ(A_k, φ)`, `d` values.
    pub embedding: Vec<f64>,
}

/// Per-frame phase points of one motion sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTrack {
    pub dataset: String,
    pub framerate: f64,
    pub points: Vec<PhasePoint>,
}

const TRACK_MAGIC: &[u8; 7] = b"PMTRACK";
const TRACK_VERSION: u32 = 1;

impl PhaseTrack {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.embedding.len())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.framerate
    }

    pub fn phases(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.phase).collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.frequency).collect()
    }

    pub fn amplitude_indices(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.amplitude_index).collect()
    }

    /// `d × frames` matrix of embeddings.
    pub fn embedding_matrix(&self) -> Tensor2 {
        let d = self.dim();
        let mut m = Tensor2::zeros(d, self.len());
        for (i, p) in self.points.iter().enumerate() {
            m.set_column(i, &p.embedding);
        }
        m
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if !(self.framerate.is_finite() && self.framerate > 0.0) {
            return Err(invalid("track framerate must be positive"));
        }
        if self.points.iter().any(|p| p.embedding.len() != d) {
            return Err(shape("track embeddings differ in dimension"));
        }
        Ok(())
    }

    /// Binary layout: magic `PMTRACK`, version u32, dataset string, framerate
    /// f64, `d` u32, frame count u64, then per frame `phi f amp_index
    /// embedding[d]` as little-endian f64.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = Vec::with_capacity(32 + self.len() * (3 + self.dim()) * 8);
        w.write_all(TRACK_MAGIC)?;
        w.write_all(&TRACK_VERSION.to_le_bytes())?;
        write_str(&mut w, &self.dataset)?;
        w.write_all(&self.framerate.to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for p in &self.points {
            w.write_all(&p.phase.to_le_bytes())?;
            w.write_all(&p.frequency.to_le_bytes())?;
            w.write_all(&(p.amplitude_index as f64).to_le_bytes())?;
            for v in &p.embedding {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fmt = |message: String| Error::Format {
            path: origin.to_path_buf(),
            message,
        };
        let r = &mut &bytes[..];
        let mut magic = [0u8; 7];
        std::io::Read::read_exact(r, &mut magic).map_err(|_| fmt("truncated header".into()))?;
        if &magic != TRACK_MAGIC {
            return Err(fmt("not a phase track (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != TRACK_VERSION {
            return Err(fmt(format!("unsupported track version {version}")));
        }
        let dataset = read_str(r)?;
        let framerate = read_f64(r)?;
        let d = read_u32(r)? as usize;
        let n = read_u64(r)? as usize;
        if (n as u128) * ((3 + d) as u128) * 8 > r.len() as u128 {
            return Err(fmt(format!("track claims {n} frames but the file is too short")));
        }
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let phase = read_f64(r)?;
            let frequency = read_f64(r)?;
            let k = read_f64(r)?;
            if !(k >= 0.0 && k.fract() == 0.0) {
                return Err(fmt(format!("invalid amplitude index {k}")));
            }
            let embedding = (0..d).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
            points.push(PhasePoint {
                phase,
                frequency,
                amplitude_index: k as usize,
                embedding,
            });
        }
        let track = PhaseTrack {
            dataset,
            framerate,
            points,
        };
        track.validate().map_err(|e| fmt(e.to_string()))?;
        Ok(track)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path)?, path)
    }

    /// Whitespace-separated table for plotting: one header line, then
    /// `frame time phi f amp p0 … p{d-1}` per frame.
    pub fn to_text(&self) -> String {
        let mut s = String::from("frame time phi f amp");
        for i in 0..self.dim() {
            s.push_str(&format!(" p{i}"));
        }
        s.push('\n');
        for (i, p) in self.points.iter().enumerate() {
            s.push_str(&format!(
                "{i} {} {} {} {}",
                i as f64 * self.dt(),
                p.phase,
                p.frequency,
                p.amplitude_index
            ));
            for v in &p.embedding {
                s.push_str(&format!(" {v}"));
            }
            s.push('\n');
        }
        s
    }
}
