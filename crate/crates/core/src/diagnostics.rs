//! Alignment instrumentation: a per-dataset MLP from manifold points to
//! average poses, the amplitude/phase swap test, and the metrics and sweep
//! tables built on top of them.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codebook::{overlap_percentage, Codebook};
use crate::diff::{Activation, Adam, Mlp, Module, Tensor2};
use crate::error::{invalid, shape, Error, Result};
use crate::manifold::{psi, unwrap_phase, PhasePoint, PhaseTrack};
use crate::motion::MotionSequence;
use crate::vqpae::{train_joint, SharedModel, TrainConfig, TrainingSet};

/// Maps a manifold point (`d` values) to root-local joint positions.
#[derive(Clone, Debug)]
pub struct AveragePoseModel {
    pub dataset: String,
    pub mlp: Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseTrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for PoseTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 1500,
            batch: 64,
            seed: 0,
        }
    }
}

impl AveragePoseModel {
    pub const LAYERS: usize = 8;

    pub fn new(dataset: &str, dim: usize, pose_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut sizes = vec![dim];
        sizes.extend(std::iter::repeat_n(pose_dim, Self::LAYERS));
        Ok(Self {
            dataset: dataset.to_string(),
            mlp: Mlp::new("pose", &sizes, Activation::LeakyRelu(0.2), rng)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mlp.inputs()
    }

    pub fn pose_dim(&self) -> usize {
        self.mlp.outputs()
    }

    /// Poses for a `d × N` block of manifold points, as `pose_dim × N`.
    pub fn predict(&self, points: &Tensor2) -> Result<Tensor2> {
        self.mlp.predict(points)
    }

    pub fn predict_one(&self, point: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor2::from_vec(point.len(), 1, point.to_vec())?;
        Ok(self.predict(&x)?.into_vec())
    }
}

impl Module for AveragePoseModel {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a crate::diff::Parameter)) {
        self.mlp.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut crate::diff::Parameter)) {
        self.mlp.visit_params_mut(f);
    }
}

/// Stacks every frame's embedding (`d × N`) and local pose (`3J × N`).
fn pairs(data: &[(&PhaseTrack, &MotionSequence)]) -> Result<(Tensor2, Tensor2)> {
    let Some((first_track, first_seq)) = data.first() else {
        return Err(invalid("no track/sequence pairs given"));
    };
    let (d, p) = (first_track.dim(), 3 * first_seq.joint_count());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (track, seq) in data {
        if track.len() != seq.frame_count() {
            return Err(invalid(format!(
                "track has {} frames but `{}` has {}",
                track.len(),
                seq.name,
                seq.frame_count()
            )));
        }
        if track.dim() != d || 3 * seq.joint_count() != p {
            return Err(shape("all pairs must share embedding and pose sizes"));
        }
        for (f, pt) in track.points.iter().enumerate() {
            xs.push(pt.embedding.clone());
            ys.push(seq.local_positions(f).to_vec());
        }
    }
    Ok((Tensor2::from_rows(&xs)?.transpose(), Tensor2::from_rows(&ys)?.transpose()))
}

fn gather(m: &Tensor2, cols: &[usize]) -> Tensor2 {
    let mut out = Tensor2::zeros(m.rows(), cols.len());
    for r in 0..m.rows() {
        let (src, dst) = (m.row(r), out.row_mut(r));
        for (o, &c) in dst.iter_mut().zip(cols) {
            *o = src[c];
        }
    }
    out
}

/// Mean per-column Euclidean norm of `pred − target` and its gradient.
fn norm_loss(pred: &Tensor2, target: &Tensor2) -> (f64, Tensor2) {
    let n = pred.cols();
    let mut grad = Tensor2::zeros(pred.rows(), n);
    let mut total = 0.0;
    for c in 0..n {
        let norm = (0..pred.rows())
            .map(|r| (pred.get(r, c) - target.get(r, c)).powi(2))
            .sum::<f64>()
            .sqrt();
        total += norm;
        if norm > 0.0 {
            for r in 0..pred.rows() {
                grad.set(r, c, (pred.get(r, c) - target.get(r, c)) / (norm * n as f64));
            }
        }
    }
    (total / n as f64, grad)
}

/// Pose loss of `model` over every frame of `data`.
pub fn pose_loss(model: &AveragePoseModel, data: &[(&PhaseTrack, &MotionSequence)]) -> Result<f64> {
    let (x, y) = pairs(data)?;
    Ok(norm_loss(&model.predict(&x)?, &y).0)
}

/// Fits an [`AveragePoseModel`] by Adam on minibatches of `(p_i, Y_i)`.
/// Returns the model and the full-data loss before and after training.
pub fn train_average_pose_multi(
    dataset: &str,
    data: &[(&PhaseTrack, &MotionSequence)],
    cfg: &PoseTrainConfig,
) -> Result<(AveragePoseModel, [f64; 2])> {
    if cfg.batch == 0 || cfg.steps == 0 || !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(invalid("pose training needs positive lr, batch and steps"));
    }
    let (x, y) = pairs(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = AveragePoseModel::new(dataset, x.rows(), y.rows(), &mut rng)?;
    let initial = norm_loss(&model.predict(&x)?, &y).0;
    let adam = Adam::with_lr(cfg.lr);
    let n = x.cols();
    for step in 0..cfg.steps {
        let cols: Vec<usize> = (0..cfg.batch.min(n)).map(|_| rng.random_range(0..n)).collect();
        let (xb, yb) = (gather(&x, &cols), gather(&y, &cols));
        let (pred, cache) = model.mlp.forward(&xb)?;
        let (loss, grad) = norm_loss(&pred, &yb);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                message: format!("pose loss became {loss}"),
            });
        }
        model.zero_grad();
        model.mlp.backward(&cache, &grad);
        adam.step_module(&mut model)?;
    }
    let last = norm_loss(&model.predict(&x)?, &y).0;
    Ok((model, [initial, last]))
}

pub fn train_average_pose(
    track: &PhaseTrack,
    seq: &MotionSequence,
    cfg: &PoseTrainConfig,
) -> Result<(AveragePoseModel, [f64; 2])> {
    train_average_pose_multi(&track.dataset, &[(track, seq)], cfg)
}

/// Mean over frames and joints of the distance between predicted and true
/// root-local joint positions.
pub fn rec_error(model: &AveragePoseModel, track: &PhaseTrack, seq: &MotionSequence) -> Result<f64> {
    let (x, y) = pairs(&[(track, seq)])?;
    joint_error(&model.predict(&x)?, &y)
}

/// Mean per-joint Euclidean distance between two `3J × N` pose blocks.
pub fn joint_error(pred: &Tensor2, truth: &Tensor2) -> Result<f64> {
    if pred.shape() != truth.shape() || pred.rows() % 3 != 0 || pred.cols() == 0 {
        return Err(shape("pose blocks must match and hold whole joints"));
    }
    let joints = pred.rows() / 3;
    let mut total = 0.0;
    for c in 0..pred.cols() {
        for j in 0..joints {
            total += (0..3)
                .map(|a| (pred.get(3 * j + a, c) - truth.get(3 * j + a, c)).powi(2))
                .sum::<f64>()
                .sqrt();
        }
    }
    Ok(total / (joints * pred.cols()) as f64)
}

/// Track whose frames take the amplitude of `amp_source` and the phase and
/// frequency of `phase_source`, frame by frame, over their common length.
pub fn swap_track(amp_source: &PhaseTrack, phase_source: &PhaseTrack, codebook: &Codebook) -> Result<PhaseTrack> {
    let n = amp_source.len().min(phase_source.len());
    if n == 0 {
        return Err(invalid("swap sources must be non-empty"));
    }
    let points = (0..n)
        .map(|i| {
            let (a, p) = (&amp_source.points[i], &phase_source.points[i]);
            if a.amplitude_index >= codebook.size() {
                return Err(invalid(format!("amplitude index {} is outside the codebook", a.amplitude_index)));
            }
            Ok(PhasePoint {
                phase: p.phase,
                frequency: p.frequency,
                amplitude_index: a.amplitude_index,
                embedding: psi(codebook.entry(a.amplitude_index), p.phase),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhaseTrack {
        dataset: amp_source.dataset.clone(),
        framerate: phase_source.framerate,
        points,
    })
}

/// Poses (`3J × N`) predicted for the swapped track.
pub fn swap_test(
    amp_source: &PhaseTrack,
    phase_source: &PhaseTrack,
    codebook: &Codebook,
    model: &AveragePoseModel,
) -> Result<Tensor2> {
    model.predict(&swap_track(amp_source, phase_source, codebook)?.embedding_matrix())
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
/// A constant `y` that the line reproduces exactly counts as a perfect fit.
pub fn linear_fit_r2(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("a linear fit needs at least two paired samples"));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("a linear fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (my + slope * (a - mx))).powi(2))
        .sum();
    if syy == 0.0 {
        return Ok(if sse == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - sse / syy)
}

/// R² of the unwrapped phase against time.
pub fn phase_linearity(phases: &[f64], dt: f64) -> Result<f64> {
    let t: Vec<f64> = (0..phases.len()).map(|i| i as f64 * dt).collect();
    linear_fit_r2(&t, &unwrap_phase(phases))
}

/// Mean of `|f − f*| / f*` over paired frames.
pub fn frequency_error(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(invalid("frequency error needs equally long, non-empty inputs"));
    }
    if truth.iter().any(|f| *f <= 0.0) {
        return Err(invalid("reference frequencies must be positive"));
    }
    Ok(predicted.iter().zip(truth).map(|(p, t)| (p - t).abs() / t).sum::<f64>() / truth.len() as f64)
}

/// Per-frame dominant period (in frames) of each row of a pose block,
/// estimated by autocorrelation, averaged over rows weighted by variance.
pub fn dominant_period(series: &Tensor2, min_lag: usize, max_lag: usize) -> Option<f64> {
    let n = series.cols();
    let max_lag = max_lag.min(n.saturating_sub(2));
    if min_lag == 0 || min_lag >= max_lag {
        return None;
    }
    let mut acf = vec![0.0; max_lag + 1];
    for r in 0..series.rows() {
        let row = series.row(r);
        let mean = row.iter().sum::<f64>() / n as f64;
        for (lag, a) in acf.iter_mut().enumerate() {
            *a += (0..n - lag).map(|i| (row[i] - mean) * (row[i + lag] - mean)).sum::<f64>() / (n - lag) as f64;
        }
    }
    // First local maximum past the first zero crossing.
    let start = (1..=max_lag).find(|&l| acf[l] <= 0.0)?;
    let lag = (start.max(min_lag)..max_lag).find(|&l| acf[l] >= acf[l - 1] && acf[l] >= acf[l + 1])?;
    let (a, b, c) = (acf[lag - 1], acf[lag], acf[lag + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-15 { 0.5 * (a - c) / denom } else { 0.0 };
    Some(lag as f64 + shift)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub codebook_size: usize,
    pub reinit: bool,
    /// Mean joint-position error of the average-pose model, per dataset.
    pub rec_error: Vec<f64>,
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub datasets: Vec<String>,
    pub rows: Vec<AblationRow>,
}

/// Embeds every sequence of `sets` with `model`.
pub fn embed_sets(model: &SharedModel, sets: &[TrainingSet]) -> Result<Vec<Vec<PhaseTrack>>> {
    sets.iter()
        .map(|s| s.sequences.iter().map(|q| model.embed_sequence(&s.id, q)).collect())
        .collect()
}

/// Average-pose error and overlap of a trained joint model.
pub fn evaluate(model: &SharedModel, sets: &[TrainingSet], pose: &PoseTrainConfig) -> Result<(Vec<f64>, f64)> {
    let tracks = embed_sets(model, sets)?;
    let mut errors = Vec::new();
    for (set, tr) in sets.iter().zip(&tracks) {
        let data: Vec<(&PhaseTrack, &MotionSequence)> = tr.iter().zip(&set.sequences).collect();
        let (m, _) = train_average_pose_multi(&set.id, &data, pose)?;
        let mut total = 0.0;
        let mut frames = 0;
        for (t, s) in &data {
            total += rec_error(&m, t, s)? * s.frame_count() as f64;
            frames += s.frame_count();
        }
        errors.push(total / frames as f64);
    }
    let indices: Vec<Vec<usize>> = tracks
        .iter()
        .map(|tr| tr.iter().flat_map(|t| t.amplitude_indices()).collect())
        .collect();
    let overlap = if sets.len() >= 2 { overlap_percentage(&indices)? } else { 100.0 };
    Ok((errors, overlap))
}

/// Trains one joint model per `(size, reinit)` combination and reports its
/// pose error and overlap. Runs combinations in parallel.
pub fn ablation_sweep(
    sizes: &[usize],
    reinit: &[bool],
    sets: &[TrainingSet],
    train: &TrainConfig,
    pose: &PoseTrainConfig,
) -> Result<AblationReport> {
    if sizes.is_empty() || reinit.is_empty() {
        return Err(invalid("ablation needs at least one codebook size and reinit setting"));
    }
    let jobs: Vec<(usize, bool)> = reinit.iter().flat_map(|&r| sizes.iter().map(move |&k| (k, r))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(k, r)| {
            let cfg = TrainConfig {
                codebook_size: k,
                reinit: r,
                ..train.clone()
            };
            let (model, _) = train_joint(sets, &cfg)?;
            let (rec_error, overlap) = evaluate(&model, sets, pose)?;
            Ok(AblationRow {
                codebook_size: k,
                reinit: r,
                rec_error,
                overlap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        datasets: sets.iter().map(|s| s.id.clone()).collect(),
        rows,
    })
}

impl AblationReport {
    fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.rows.iter().map(|r| r.codebook_size).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    fn row(&self, k: usize, reinit: bool) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.codebook_size == k && r.reinit == reinit)
    }

    /// Two tables with codebook sizes as columns: mean joint-position error
    /// per dataset, then overlap percentage per reinit setting.
    pub fn to_text(&self) -> String {
        let sizes = self.sizes();
        let mut s = String::new();
        let header = |s: &mut String, title: &str| {
            let _ = writeln!(s, "{title}");
            let _ = write!(s, "{:<24}", "|A|");
            for k in &sizes {
                let _ = write!(s, "{k:>12}");
            }
            s.push('\n');
        };
        header(&mut s, "Per-frame mean joint position error");
        for (i, name) in self.datasets.iter().enumerate() {
            for reinit in [true, false] {
                if sizes.iter().all(|&k| self.row(k, reinit).is_none()) {
                    continue;
                }
                let label = if reinit { name.clone() } else { format!("{name} (no reinit.)") };
                let _ = write!(s, "{label:<24}");
                for &k in &sizes {
                    match self.row(k, reinit) {
                        Some(r) => write!(s, "{:>12.4}", r.rec_error[i]),
                        None => write!(s, "{:>12}", "-"),
                    }
                    .unwrap();
                }
                s.push('\n');
            }
        }
        s.push('\n');
        header(&mut s, "Manifold overlapping percentage");
        let pair = self.datasets.join("-");
        for reinit in [true, false] {
            if sizes.iter().all(|&k| self.row(k, reinit).is_none()) {
                continue;
            }
            let label = if reinit { pair.clone() } else { format!("{pair} (no reinit.)") };
            let _ = write!(s, "{label:<24}");
            for &k in &sizes {
                match self.row(k, reinit) {
                    Some(r) => write!(s, "{:>12.2}", r.overlap),
                    None => write!(s, "{:>12}", "-"),
                }
                .unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Long-format CSV: `metric,dataset,codebook_size,reinit,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,dataset,codebook_size,reinit,value\n");
        for r in &self.rows {
            for (name, e) in self.datasets.iter().zip(&r.rec_error) {
                let _ = writeln!(s, "rec_error,{name},{},{},{e}", r.codebook_size, r.reinit);
            }
            let _ = writeln!(
                s,
                "overlap,{},{},{},{}",
                self.datasets.join("-"),
                r.codebook_size,
                r.reinit,
                r.overlap
            );
        }
        s
    }
}

/// Summary of one embedded sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackStats {
    pub dataset: String,
    pub sequence: String,
    pub frames: usize,
    pub mean_frequency: f64,
    pub phase_r2: f64,
    /// Mean relative frequency error when a reference is known.
    pub frequency_error: Option<f64>,
    /// Frame count per amplitude index.
    pub usage: Vec<usize>,
}

pub fn track_stats(sequence: &str, track: &PhaseTrack, codebook_size: usize, truth: Option<&[f64]>) -> Result<TrackStats> {
    if track.len() < 2 {
        return Err(invalid("track statistics need at least two frames"));
    }
    let mut usage = vec![0; codebook_size];
    for i in track.amplitude_indices() {
        if i >= codebook_size {
            return Err(invalid(format!("amplitude index {i} is outside a codebook of {codebook_size}")));
        }
        usage[i] += 1;
    }
    let freqs = track.frequencies();
    Ok(TrackStats {
        dataset: track.dataset.clone(),
        sequence: sequence.to_string(),
        frames: track.len(),
        mean_frequency: freqs.iter().sum::<f64>() / freqs.len() as f64,
        phase_r2: phase_linearity(&track.phases(), track.dt())?,
        frequency_error: truth.map(|t| frequency_error(&freqs, t)).transpose()?,
        usage,
    })
}

/// Per-sequence table plus overlap across datasets.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsReport {
    pub tracks: Vec<TrackStats>,
    pub overlap: Option<f64>,
    pub purity: Option<f64>,
}

impl StatsReport {
    pub fn new(tracks: Vec<TrackStats>, purity: Option<f64>) -> Result<Self> {
        let mut ids: Vec<&str> = tracks.iter().map(|t| t.dataset.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        let overlap = if ids.len() >= 2 {
            let k = tracks.first().map_or(0, |t| t.usage.len());
            let lists: Vec<Vec<usize>> = ids
                .iter()
                .map(|id| {
                    let mut counts = vec![0usize; k];
                    for t in tracks.iter().filter(|t| t.dataset == *id) {
                        for (c, u) in counts.iter_mut().zip(&t.usage) {
                            *c += u;
                        }
                    }
                    counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c)).collect()
                })
                .collect();
            Some(overlap_percentage(&lists)?)
        } else {
            None
        };
        Ok(Self { tracks, overlap, purity })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<12} {:<24} {:>7} {:>9} {:>9} {:>9}  usage\n",
            "dataset", "sequence", "frames", "mean_f", "phase_r2", "f_err"
        );
        for t in &self.tracks {
            let err = t.frequency_error.map_or("-".to_string(), |e| format!("{e:.4}"));
            let usage: Vec<String> = t.usage.iter().map(usize::to_string).collect();
            let _ = writeln!(
                s,
                "{:<12} {:<24} {:>7} {:>9.4} {:>9.4} {:>9}  {}",
                t.dataset,
                t.sequence,
                t.frames,
                t.mean_frequency,
                t.phase_r2,
                err,
                usage.join(" ")
            );
        }
        if let Some(o) = self.overlap {
            let _ = writeln!(s, "\nManifold overlapping percentage: {o:.2}");
        }
        if let Some(p) = self.purity {
            let _ = writeln!(s, "Amplitude-index purity: {:.2}", 100.0 * p);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dataset,sequence,frames,mean_frequency,phase_r2,frequency_error,usage\n");
        for t in &self.tracks {
            let usage: Vec<String> = t.usage.iter().map(usize::to_string).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                t.dataset,
                t.sequence,
                t.frames,
                t.mean_frequency,
                t.phase_r2,
                t.frequency_error.map_or(String::new(), |e| e.to_string()),
                usage.join(";")
            );
        }
        if let Some(o) = self.overlap {
            let _ = writeln!(s, "overlap,,,,,,{o}");
        }
        if let Some(p) = self.purity {
            let _ = writeln!(s, "purity,,,,,,{p}");
        }
        s
    }
}
