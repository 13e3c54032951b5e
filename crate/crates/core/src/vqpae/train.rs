use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codebook::{Codebook, VqNorm, DEFAULT_COMMITMENT, DEFAULT_DECAY, DEFAULT_EPSILON};
use crate::config::Config;
use crate::diff::{Adam, Module, Tensor2};
use crate::error::{invalid, Error, Result};
use crate::motion::{extract_features_with, window_length, FeatureOptions, FeatureSeries, MotionSequence};

use super::model::{default_hidden, LossWeights, ModelConfig, VqPae};
use super::shared::{gather_windows, validate_dataset_id, SharedModel};

/// Optimization and architecture settings for training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    /// Window duration in seconds.
    pub window_duration: f64,
    pub lambda_vq: f64,
    /// Weight of the commitment term inside the VQ loss.
    pub commitment: f64,
    pub vq_norm: VqNorm,
    pub steps: usize,
    pub seed: u64,
    pub codebook_size: usize,
    pub embedding_dim: usize,
    /// Intermediate channels; `None` means `max(64, 2J)` per dataset.
    pub hidden: Option<usize>,
    pub kernel: usize,
    /// Per-iteration reinitialization of rarely used codebook entries.
    pub reinit: bool,
    pub decay: f64,
    pub epsilon: f64,
    pub head_sharpness: f64,
    pub root_velocity: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch: 32,
            window_duration: 1.0,
            lambda_vq: 1.0,
            commitment: DEFAULT_COMMITMENT,
            vq_norm: VqNorm::default(),
            steps: 2000,
            seed: 0,
            codebook_size: 8,
            embedding_dim: 8,
            hidden: None,
            kernel: 23,
            reinit: true,
            decay: DEFAULT_DECAY,
            epsilon: DEFAULT_EPSILON,
            head_sharpness: 25.0,
            root_velocity: true,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "lr",
        "batch",
        "window_duration",
        "lambda_vq",
        "commitment",
        "vq_norm",
        "steps",
        "seed",
        "codebook_size",
        "embedding_dim",
        "hidden",
        "kernel",
        "reinit",
        "decay",
        "epsilon",
        "head_sharpness",
        "root_velocity",
    ];

    /// Reads the `[train]` section; absent keys keep their defaults.
    pub fn from_config(cfg: &Config, section: &str) -> Result<Self> {
        cfg.check_keys(section, Self::KEYS)?;
        let d = Self::default();
        let hidden: usize = cfg.parse_or(section, "hidden", 0)?;
        let c = Self {
            lr: cfg.parse_or(section, "lr", d.lr)?,
            batch: cfg.parse_or(section, "batch", d.batch)?,
            window_duration: cfg.parse_or(section, "window_duration", d.window_duration)?,
            lambda_vq: cfg.parse_or(section, "lambda_vq", d.lambda_vq)?,
            commitment: cfg.parse_or(section, "commitment", d.commitment)?,
            vq_norm: cfg.parse_or(section, "vq_norm", d.vq_norm)?,
            steps: cfg.parse_or(section, "steps", d.steps)?,
            seed: cfg.parse_or(section, "seed", d.seed)?,
            codebook_size: cfg.parse_or(section, "codebook_size", d.codebook_size)?,
            embedding_dim: cfg.parse_or(section, "embedding_dim", d.embedding_dim)?,
            hidden: (hidden > 0).then_some(hidden),
            kernel: cfg.parse_or(section, "kernel", d.kernel)?,
            reinit: cfg.parse_or(section, "reinit", d.reinit)?,
            decay: cfg.parse_or(section, "decay", d.decay)?,
            epsilon: cfg.parse_or(section, "epsilon", d.epsilon)?,
            head_sharpness: cfg.parse_or(section, "head_sharpness", d.head_sharpness)?,
            root_velocity: cfg.parse_or(section, "root_velocity", d.root_velocity)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, n: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(format!("{n} must be positive, got {v}")))
            }
        };
        pos(self.lr, "lr")?;
        pos(self.window_duration, "window_duration")?;
        if !(self.lambda_vq >= 0.0 && self.commitment >= 0.0) {
            return Err(invalid("lambda_vq and commitment must be non-negative"));
        }
        if self.batch == 0 || self.codebook_size == 0 || self.embedding_dim == 0 {
            return Err(invalid("batch, codebook_size and embedding_dim must be positive"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(invalid(format!("decay must lie in (0, 1), got {}", self.decay)));
        }
        if self.kernel % 2 == 0 {
            return Err(invalid(format!("kernel must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_vq: self.lambda_vq,
            commitment: self.commitment,
            norm: self.vq_norm,
        }
    }
}

/// All sequences of one character.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub id: String,
    pub sequences: Vec<MotionSequence>,
}

/// Loss history of a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Sum over datasets of the batch-mean total loss, per step.
    pub loss: Vec<f64>,
    /// Batch-mean reconstruction loss per dataset and step.
    pub rec: Vec<Vec<f64>>,
}

/// Features of one dataset after normalization, ready for sampling.
struct Prepared {
    features: Vec<FeatureSeries>,
    /// Cumulative frame counts for uniform frame sampling.
    offsets: Vec<usize>,
}

impl Prepared {
    fn total(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    fn locate(&self, global: usize) -> (usize, usize) {
        let s = self.offsets.partition_point(|&o| o <= global) - 1;
        (s, global - self.offsets[s])
    }
}

/// Per-channel mean and standard deviation over every frame; channels with
/// no spread get unit scale.
pub fn channel_statistics(features: &[FeatureSeries]) -> (Vec<f64>, Vec<f64>) {
    let j = features[0].channels();
    let n: usize = features.iter().map(|f| f.frames()).sum();
    let mut mean = vec![0.0; j];
    let mut std = vec![0.0; j];
    for c in 0..j {
        let s: f64 = features.iter().flat_map(|f| f.values.row(c)).sum();
        mean[c] = s / n as f64;
        let v: f64 = features
            .iter()
            .flat_map(|f| f.values.row(c))
            .map(|x| (x - mean[c]) * (x - mean[c]))
            .sum::<f64>()
            / n as f64;
        std[c] = if v.sqrt() > 1e-8 { v.sqrt() } else { 1.0 };
    }
    (mean, std)
}

fn prepare(set: &TrainingSet, opts: FeatureOptions) -> Result<(Prepared, f64)> {
    validate_dataset_id(&set.id)?;
    let first = set
        .sequences
        .first()
        .ok_or_else(|| invalid(format!("dataset `{}` has no sequences", set.id)))?;
    let framerate = first.framerate();
    let joints = first.joint_count();
    let mut features = Vec::with_capacity(set.sequences.len());
    let mut offsets = vec![0];
    for s in &set.sequences {
        if (s.framerate() - framerate).abs() > 1e-9 || s.joint_count() != joints {
            return Err(invalid(format!(
                "dataset `{}` mixes framerates or skeletons (sequence `{}`)",
                set.id, s.name
            )));
        }
        let f = extract_features_with(s, opts)?;
        offsets.push(offsets.last().unwrap() + f.frames());
        features.push(f);
    }
    Ok((Prepared { features, offsets }, framerate))
}

/// Builds untrained models (with dataset normalization) and a fresh codebook.
pub fn initialize(sets: &[TrainingSet], cfg: &TrainConfig) -> Result<SharedModel> {
    Ok(initialize_prepared(sets, cfg)?.0)
}

fn initialize_prepared(sets: &[TrainingSet], cfg: &TrainConfig) -> Result<(SharedModel, Vec<Prepared>)> {
    cfg.validate()?;
    if sets.is_empty() {
        return Err(invalid("training needs at least one dataset"));
    }
    let opts = FeatureOptions {
        root_velocity: cfg.root_velocity,
    };
    let mut codebook = Codebook::new(cfg.codebook_size, cfg.embedding_dim, cfg.seed ^ 0x5eed_c0de)?;
    codebook.decay = cfg.decay;
    codebook.epsilon = cfg.epsilon;
    let mut models = Vec::with_capacity(sets.len());
    let mut prepared = Vec::with_capacity(sets.len());
    for (i, set) in sets.iter().enumerate() {
        if sets[..i].iter().any(|s| s.id == set.id) {
            return Err(invalid(format!("dataset id `{}` appears twice", set.id)));
        }
        let (p, framerate) = prepare(set, opts)?;
        let t = window_length(cfg.window_duration, framerate)?;
        let shortest = p.features.iter().map(|f| f.frames()).min().unwrap_or(0);
        if shortest < t {
            return Err(invalid(format!(
                "dataset `{}` has a sequence of {shortest} frames, shorter than the window length {t}",
                set.id
            )));
        }
        if p.total() < cfg.batch {
            return Err(invalid(format!(
                "dataset `{}` has fewer windows ({}) than the batch size {}",
                set.id,
                p.total(),
                cfg.batch
            )));
        }
        let channels = p.features[0].channels();
        let mut mc = ModelConfig::new(channels, cfg.embedding_dim, t, framerate);
        mc.hidden = cfg.hidden.unwrap_or_else(|| default_hidden(channels));
        mc.kernel = cfg.kernel;
        mc.head_sharpness = cfg.head_sharpness;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64 + 1));
        let mut m = VqPae::new(&set.id, mc, &mut rng)?;
        let (mean, std) = channel_statistics(&p.features);
        m.norm_mean = mean;
        m.norm_std = std;
        codebook.attach(&set.id);
        models.push(m);
        prepared.push(p);
    }
    Ok((
        SharedModel {
            codebook,
            models,
            root_velocity: cfg.root_velocity,
            window_duration: cfg.window_duration,
        },
        prepared,
    ))
}

/// Trains a single autoencoder with its own codebook.
pub fn train_single(set: &TrainingSet, cfg: &TrainConfig) -> Result<(SharedModel, TrainReport)> {
    train_joint(std::slice::from_ref(set), cfg)
}

/// Trains one autoencoder per dataset against a shared codebook.
pub fn train_joint(sets: &[TrainingSet], cfg: &TrainConfig) -> Result<(SharedModel, TrainReport)> {
    train_joint_with(sets, cfg, &mut |_, _| {})
}

/// [`train_joint`] with a callback receiving `(step, loss)` after every step.
pub fn train_joint_with(
    sets: &[TrainingSet],
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<(SharedModel, TrainReport)> {
    let mut trainer = Trainer::new(sets, cfg)?;
    let mut report = TrainReport {
        loss: Vec::with_capacity(cfg.steps),
        rec: vec![Vec::with_capacity(cfg.steps); sets.len()],
    };
    for step in 0..cfg.steps {
        let stats = trainer.step()?;
        for (r, v) in report.rec.iter_mut().zip(&stats.rec) {
            r.push(*v);
        }
        report.loss.push(stats.loss);
        progress(step, stats.loss);
    }
    Ok((trainer.into_model(), report))
}

/// Batch statistics of one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    /// Sum over datasets of the batch-mean total loss.
    pub loss: f64,
    /// Batch-mean reconstruction loss per dataset.
    pub rec: Vec<f64>,
    /// Batch-mean VQ loss per dataset.
    pub vq: Vec<f64>,
    /// Batch-mean predicted frequency per dataset.
    pub frequency: Vec<f64>,
}

/// Step-by-step joint training over a fixed set of datasets.
pub struct Trainer {
    shared: SharedModel,
    prepared: Vec<Prepared>,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    adam: Adam,
    step: usize,
}

impl Trainer {
    pub fn new(sets: &[TrainingSet], cfg: &TrainConfig) -> Result<Self> {
        let (shared, prepared) = initialize_prepared(sets, cfg)?;
        Ok(Self {
            shared,
            prepared,
            cfg: cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            adam: Adam::with_lr(cfg.lr),
            step: 0,
        })
    }

    pub fn model(&self) -> &SharedModel {
        &self.shared
    }

    pub fn into_model(self) -> SharedModel {
        self.shared
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One iteration: per dataset sample, forward, backward and usage
    /// update; then the shared reinitialization and one Adam update of every
    /// parameter.
    pub fn step(&mut self) -> Result<StepStats> {
        let step = self.step;
        let weights = self.cfg.loss_weights();
        let shared = &mut self.shared;
        let k = shared.codebook.size();
        let n = self.prepared.len();
        let mut stats = StepStats {
            loss: 0.0,
            rec: Vec::with_capacity(n),
            vq: Vec::with_capacity(n),
            frequency: Vec::with_capacity(n),
        };
        shared.codebook.zero_grad();
        let mut proposals = Vec::with_capacity(n);
        for (i, p) in self.prepared.iter().enumerate() {
            let model = &mut shared.models[i];
            model.zero_grad();
            let x = sample_batch(model, p, self.cfg.batch, &mut self.rng);
            let (out, cache) = model.forward(&shared.codebook, &x, weights, None)?;
            if !out.loss.is_finite() {
                return Err(Error::Divergence {
                    step,
                    message: format!("loss of dataset `{}` is {}", model.id, out.loss),
                });
            }
            stats.loss += out.loss;
            stats.rec.push(out.mean_rec());
            stats.vq.push(out.mean_vq());
            let f = &out.encoded.frequency;
            stats.frequency.push(f.iter().sum::<f64>() / f.len() as f64);
            model.backward(&mut shared.codebook, &out, cache, weights)?;
            let mut counts = vec![0usize; k];
            for q in &out.encoded.quantized {
                counts[q.index] += 1;
            }
            shared.codebook.record_usage(&model.id, &counts)?;
            if self.cfg.reinit {
                let raw: Vec<Vec<f64>> = (0..out.encoded.len()).map(|w| out.encoded.raw.column(w)).collect();
                proposals.push(shared.codebook.reinit_step(&model.id, &raw)?);
            }
        }
        if self.cfg.reinit {
            shared.codebook.apply_shared_reinit(&proposals)?;
        }
        let diverged = |e: Error| Error::Divergence {
            step,
            message: e.to_string(),
        };
        for m in &mut shared.models {
            self.adam.step_module(m).map_err(diverged)?;
        }
        self.adam.step_module(&mut shared.codebook).map_err(diverged)?;
        self.step += 1;
        Ok(stats)
    }
}

fn sample_batch(model: &VqPae, p: &Prepared, batch: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    let t = model.window_len();
    let mut parts = Vec::with_capacity(batch);
    for _ in 0..batch {
        let (s, frame) = p.locate(rng.random_range(0..p.total()));
        parts.push(gather_windows(model, &p.features[s], &[frame]));
    }
    let x = Tensor2::hcat(&parts).expect("uniform window shape");
    debug_assert_eq!(x.cols(), batch * t);
    x
}
