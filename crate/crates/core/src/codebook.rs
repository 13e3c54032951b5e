//! Shared amplitude codebook with per-encoder usage tracking and online
//! reinitialization of rarely used entries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::ops::l2_distance_with_grad;
use crate::diff::{Module, Parameter, Tensor2};
use crate::error::{invalid, shape, Result};

pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_COMMITMENT: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct Codebook {
    /// `K × 2d`, one entry per row.
    pub entries: Parameter,
    /// Usage decay `γ`.
    pub decay: f64,
    /// Regularizer `ε` in the interpolation weight.
    pub epsilon: f64,
    encoders: Vec<String>,
    usage: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
}

/// Nearest-entry lookup for one raw amplitude.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizeResult {
    pub index: usize,
    pub quantized: Vec<f64>,
    pub raw: Vec<f64>,
    /// `‖Ã − A‖₂`
    pub residual: f64,
}

/// Vector-quantization loss and its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct VqLoss {
    pub loss: f64,
    /// Gradient reaching the raw amplitude (commitment term only).
    pub grad_raw: Vec<f64>,
    /// Gradient reaching the codebook entry (codebook term only).
    pub grad_entry: Vec<f64>,
}

/// Distance used by the two VQ terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VqNorm {
    /// Plain Euclidean distance. Its gradient has unit length wherever it
    /// is defined, so the commitment pull never grows with the gap.
    Euclidean,
    /// Squared distance; the pull on the encoder grows with the gap.
    #[default]
    Squared,
}

impl std::str::FromStr for VqNorm {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "l2" | "euclidean" => Ok(Self::Euclidean),
            "squared" | "l2sq" => Ok(Self::Squared),
            other => Err(crate::error::invalid(format!("unknown vq norm `{other}`"))),
        }
    }
}

impl std::fmt::Display for VqNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Euclidean => "l2",
            Self::Squared => "squared",
        })
    }
}

/// `‖sg(Ã) − A‖ + β‖Ã − sg(A)‖`. The first term only moves the entry and
/// the second only moves the encoder output.
pub fn vq_loss(raw: &[f64], entry: &[f64], commitment: f64) -> VqLoss {
    let (dist, g) = l2_distance_with_grad(entry, raw);
    VqLoss {
        loss: (1.0 + commitment) * dist,
        grad_raw: g.iter().map(|v| -commitment * v).collect(),
        grad_entry: g,
    }
}

/// `‖sg(Ã) − A‖² + β‖Ã − sg(A)‖²`.
pub fn vq_loss_squared(raw: &[f64], entry: &[f64], commitment: f64) -> VqLoss {
    let diff: Vec<f64> = entry.iter().zip(raw).map(|(a, r)| a - r).collect();
    let sq: f64 = diff.iter().map(|v| v * v).sum();
    VqLoss {
        loss: (1.0 + commitment) * sq,
        grad_raw: diff.iter().map(|v| -2.0 * commitment * v).collect(),
        grad_entry: diff.iter().map(|v| 2.0 * v).collect(),
    }
}

/// Dispatches to [`vq_loss`] or [`vq_loss_squared`].
pub fn vq_loss_with(raw: &[f64], entry: &[f64], commitment: f64, norm: VqNorm) -> VqLoss {
    match norm {
        VqNorm::Euclidean => vq_loss(raw, entry, commitment),
        VqNorm::Squared => vq_loss_squared(raw, entry, commitment),
    }
}

impl Codebook {
    /// `K` entries of dimension `2d` drawn uniformly from `[-1/K, 1/K]`.
    pub fn new(k: usize, d: usize, seed: u64) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(invalid(format!("codebook needs K ≥ 1 and d ≥ 1, got K={k}, d={d}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / k as f64;
        let data: Vec<f64> = (0..k * 2 * d).map(|_| rng.random_range(-bound..=bound)).collect();
        Ok(Self {
            entries: Parameter::new("codebook.entries", Tensor2::from_vec(k, 2 * d, data)?),
            decay: DEFAULT_DECAY,
            epsilon: DEFAULT_EPSILON,
            encoders: Vec::new(),
            usage: Vec::new(),
            rng,
        })
    }

    pub fn from_entries(entries: Tensor2, seed: u64) -> Result<Self> {
        if entries.rows() == 0 || entries.cols() == 0 || entries.cols() % 2 != 0 {
            return Err(shape(format!("codebook entries must be K × 2d, got {:?}", entries.shape())));
        }
        Ok(Self {
            entries: Parameter::new("codebook.entries", entries),
            decay: DEFAULT_DECAY,
            epsilon: DEFAULT_EPSILON,
            encoders: Vec::new(),
            usage: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn size(&self) -> usize {
        self.entries.value.rows()
    }

    /// Amplitude dimension `2d`.
    pub fn width(&self) -> usize {
        self.entries.value.cols()
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        self.entries.value.row(i)
    }

    /// Registers an encoder and returns its slot. Registering the same id
    /// twice returns the existing slot.
    pub fn attach(&mut self, encoder: &str) -> usize {
        if let Some(i) = self.encoders.iter().position(|e| e == encoder) {
            return i;
        }
        self.encoders.push(encoder.to_string());
        self.usage.push(vec![0.0; self.size()]);
        self.encoders.len() - 1
    }

    pub fn encoders(&self) -> &[String] {
        &self.encoders
    }

    fn slot(&self, encoder: &str) -> Result<usize> {
        self.encoders
            .iter()
            .position(|e| e == encoder)
            .ok_or_else(|| invalid(format!("encoder `{encoder}` is not attached to the codebook")))
    }

    pub fn usage(&self, encoder: &str) -> Result<&[f64]> {
        Ok(&self.usage[self.slot(encoder)?])
    }

    pub fn set_usage(&mut self, encoder: &str, usage: Vec<f64>) -> Result<()> {
        if usage.len() != self.size() {
            return Err(shape(format!("usage has {} entries, codebook has {}", usage.len(), self.size())));
        }
        let s = self.attach(encoder);
        self.usage[s] = usage;
        Ok(())
    }

    /// Nearest entry under L2; ties go to the lowest index.
    pub fn quantize(&self, raw: &[f64]) -> QuantizeResult {
        let (index, d2) = self.nearest(raw);
        QuantizeResult {
            index,
            quantized: self.entry(index).to_vec(),
            raw: raw.to_vec(),
            residual: d2.sqrt(),
        }
    }

    fn nearest(&self, raw: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for i in 0..self.size() {
            let d2: f64 = self.entry(i).iter().zip(raw).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    /// `N_i ← γ N_i + (1 − γ) n_i / N` for one encoder, `N = Σ n_i`.
    pub fn record_usage(&mut self, encoder: &str, counts: &[usize]) -> Result<()> {
        let s = self.slot(encoder)?;
        if counts.len() != self.size() {
            return Err(shape(format!("{} counts for {} entries", counts.len(), self.size())));
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(invalid("usage update needs at least one quantization"));
        }
        let g = self.decay;
        for (u, &n) in self.usage[s].iter_mut().zip(counts) {
            *u = g * *u + (1.0 - g) * n as f64 / total as f64;
        }
        Ok(())
    }

    /// Interpolation weight `α = exp(−N · 10/(1−γ) − ε)`.
    pub fn alpha(&self, usage: f64) -> f64 {
        (-usage * 10.0 / (1.0 - self.decay) - self.epsilon).exp()
    }

    /// Probabilities of drawing each raw amplitude as the target for
    /// `entry`: proportional to `exp(−‖A_i − Ã_k‖)`.
    pub fn sampling_weights(entry: &[f64], batch: &[Vec<f64>]) -> Vec<f64> {
        let d: Vec<f64> = batch
            .iter()
            .map(|r| entry.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect();
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = d.iter().map(|v| (min - v).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }

    /// Proposed entries for one encoder: `A_i' = (1 − α_i) A_i + α_i Z_i`
    /// with `Z_i` drawn from this iteration's raw amplitudes.
    pub fn reinit_step(&mut self, encoder: &str, batch: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let s = self.slot(encoder)?;
        if batch.is_empty() {
            return Err(invalid("reinitialization needs a non-empty batch"));
        }
        if batch.iter().any(|r| r.len() != self.width()) {
            return Err(shape("raw amplitude width does not match the codebook"));
        }
        let mut out = Vec::with_capacity(self.size());
        for i in 0..self.size() {
            let entry = self.entry(i).to_vec();
            let alpha = self.alpha(self.usage[s][i]);
            let w = Self::sampling_weights(&entry, batch);
            let u: f64 = self.rng.random();
            let mut acc = 0.0;
            let mut pick = batch.len() - 1;
            for (k, wk) in w.iter().enumerate() {
                acc += wk;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            let z = &batch[pick];
            out.push(entry.iter().zip(z).map(|(a, zv)| (1.0 - alpha) * a + alpha * zv).collect());
        }
        Ok(out)
    }

    /// Sets every entry to the mean of the per-encoder proposals.
    pub fn apply_shared_reinit(&mut self, proposals: &[Vec<Vec<f64>>]) -> Result<()> {
        if proposals.len() != self.encoders.len() || proposals.is_empty() {
            return Err(invalid(format!(
                "expected one proposal set per attached encoder ({}), got {}",
                self.encoders.len(),
                proposals.len()
            )));
        }
        let (k, w) = (self.size(), self.width());
        if proposals.iter().any(|p| p.len() != k || p.iter().any(|e| e.len() != w)) {
            return Err(shape("proposal shape does not match the codebook"));
        }
        let n = proposals.len() as f64;
        for i in 0..k {
            let row = self.entries.value.row_mut(i);
            for (c, v) in row.iter_mut().enumerate() {
                *v = proposals.iter().map(|p| p[i][c]).sum::<f64>() / n;
            }
        }
        Ok(())
    }
}

impl Module for Codebook {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.entries);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.entries);
    }
}

/// Percentage of frames (over all datasets) whose amplitude index is used by
/// every dataset. Each element of `datasets` lists the indices of all frames
/// of one dataset.
pub fn overlap_percentage(datasets: &[Vec<usize>]) -> Result<f64> {
    if datasets.len() < 2 {
        return Err(invalid("overlap needs at least two datasets"));
    }
    if datasets.iter().any(Vec::is_empty) {
        return Err(invalid("overlap needs non-empty index lists"));
    }
    let k = datasets.iter().flatten().max().map_or(0, |m| m + 1);
    let mut used_by_all = vec![true; k];
    for ds in datasets {
        let mut used = vec![false; k];
        for &i in ds {
            used[i] = true;
        }
        for (a, u) in used_by_all.iter_mut().zip(used) {
            *a &= u;
        }
    }
    let total: usize = datasets.iter().map(Vec::len).sum();
    let shared = datasets.iter().flatten().filter(|&&i| used_by_all[i]).count();
    Ok(100.0 * shared as f64 / total as f64)
}

/// Cluster purity: for each amplitude index take the count of its most
/// frequent label, sum, and divide by the number of frames.
pub fn purity(indices: &[usize], labels: &[usize]) -> Result<f64> {
    if indices.len() != labels.len() || indices.is_empty() {
        return Err(invalid("purity needs equally long, non-empty index and label lists"));
    }
    let k = indices.iter().max().map_or(0, |m| m + 1);
    let c = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; c]; k];
    for (&i, &l) in indices.iter().zip(labels) {
        counts[i][l] += 1;
    }
    let hit: usize = counts.iter().map(|row| row.iter().copied().max().unwrap_or(0)).sum();
    Ok(hit as f64 / indices.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_range_and_determinism() {
        let cb = Codebook::new(4, 3, 9).unwrap();
        assert!(cb.entries.value.data().iter().all(|v| v.abs() <= 0.25));
        assert_eq!(cb.entries.value, Codebook::new(4, 3, 9).unwrap().entries.value);
        let one = Codebook::new(1, 2, 0).unwrap();
        assert_eq!(one.quantize(&[5.0, -3.0, 1.0, 0.0]).index, 0);
    }

    #[test]
    fn quantize_reference_cases() {
        let cb = Codebook::from_entries(Tensor2::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap(), 0).unwrap();
        assert_eq!(cb.quantize(&[0.2, 0.1]).index, 0);
        let q = cb.quantize(&[1.0, 1.0]);
        assert_eq!((q.index, q.residual), (1, 0.0));
        assert_eq!(cb.quantize(&[0.5, 0.5]).index, 0, "ties go to the lowest index");
    }

    #[test]
    fn vq_loss_vanishes_at_the_entry() {
        let l = vq_loss(&[0.3, 0.4], &[0.3, 0.4], 0.25);
        assert_eq!(l.loss, 0.0);
        assert!(l.grad_raw.iter().chain(&l.grad_entry).all(|&g| g == 0.0));
        let l = vq_loss(&[3.0, 4.0], &[0.0, 0.0], 0.25);
        assert!((l.loss - 6.25).abs() < 1e-12);
        assert_eq!(l.grad_raw, vec![0.25 * 0.6, 0.25 * 0.8]);
    }

    #[test]
    fn usage_update_arithmetic() {
        let mut cb = Codebook::new(3, 1, 0).unwrap();
        cb.decay = 0.9;
        cb.attach("a");
        cb.record_usage("a", &[32, 0, 0]).unwrap();
        let u = cb.usage("a").unwrap();
        assert!((u[0] - 0.1).abs() < 1e-15 && u[1] == 0.0);
        cb.record_usage("a", &[0, 32, 0]).unwrap();
        assert!((cb.usage("a").unwrap()[0] - 0.09).abs() < 1e-15);
        assert!(cb.record_usage("b", &[1, 0, 0]).is_err());
    }

    #[test]
    fn alpha_limits() {
        let cb = Codebook::new(2, 1, 0).unwrap();
        assert!((cb.alpha(0.0) - (-1e-3f64).exp()).abs() < 1e-15);
        assert!(cb.alpha(0.5) < 1e-200);
    }

    #[test]
    fn shared_reinit_averages() {
        let mut cb = Codebook::new(1, 1, 0).unwrap();
        cb.attach("a");
        cb.attach("b");
        cb.apply_shared_reinit(&[vec![vec![1.0, 2.0]], vec![vec![3.0, -2.0]]]).unwrap();
        assert_eq!(cb.entry(0), &[2.0, 0.0]);
        assert!(cb.apply_shared_reinit(&[vec![vec![1.0, 2.0]]]).is_err());
    }

    #[test]
    fn overlap_and_purity_reference_cases() {
        assert_eq!(overlap_percentage(&[vec![0, 1, 1], vec![1, 0]]).unwrap(), 100.0);
        assert_eq!(overlap_percentage(&[vec![0, 0], vec![1, 1]]).unwrap(), 0.0);
        assert_eq!(purity(&[0, 0, 1, 1], &[2, 2, 0, 1]).unwrap(), 0.75);
    }
}
