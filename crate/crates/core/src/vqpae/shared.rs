use std::path::Path;

use rand::SeedableRng;
use rayon::prelude::*;

use crate::codebook::Codebook;
use crate::diff::{Checkpoint, Module, Tensor2};
use crate::error::{invalid, Error, Result};
use crate::manifold::{psi, PhasePoint, PhaseTrack};
use crate::motion::{clamped_frame, extract_features_with, FeatureOptions, FeatureSeries, MotionSequence};

use super::model::{EncodeOutput, ModelConfig, VqPae};

/// Frames encoded together when embedding a whole sequence.
const EMBED_CHUNK: usize = 64;

/// Every per-character autoencoder together with the codebook they share.
#[derive(Clone, Debug)]
pub struct SharedModel {
    pub codebook: Codebook,
    pub models: Vec<VqPae>,
    /// Whether input features carry the root-velocity channels.
    pub root_velocity: bool,
    /// Window duration in seconds.
    pub window_duration: f64,
}

/// Checks that a dataset id is usable as a checkpoint namespace.
pub fn validate_dataset_id(id: &str) -> Result<()> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(invalid(format!(
            "dataset id `{id}` must be non-empty ASCII letters, digits, `_` or `-`"
        )));
    }
    Ok(())
}

impl SharedModel {
    pub fn model(&self, id: &str) -> Result<&VqPae> {
        self.models
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| invalid(format!("no model for dataset `{id}`")))
    }

    pub fn model_index(&self, id: &str) -> Result<usize> {
        self.models
            .iter()
            .position(|m| m.id == id)
            .ok_or_else(|| invalid(format!("no model for dataset `{id}`")))
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.id.clone()).collect()
    }

    pub fn feature_options(&self) -> FeatureOptions {
        FeatureOptions {
            root_velocity: self.root_velocity,
        }
    }

    /// Picks the model whose channel count and framerate fit `seq`; with
    /// several candidates the id must be given.
    pub fn model_for(&self, seq: &MotionSequence, id: Option<&str>) -> Result<&VqPae> {
        if let Some(id) = id {
            return self.model(id);
        }
        let channels = 3 * seq.joint_count() + if self.root_velocity { 3 } else { 0 };
        let fits: Vec<&VqPae> = self
            .models
            .iter()
            .filter(|m| m.config.channels == channels && (m.config.framerate - seq.framerate()).abs() < 1e-9)
            .collect();
        match fits.as_slice() {
            [one] => Ok(one),
            [] => Err(invalid(format!(
                "no model accepts {channels} channels at {} fps",
                seq.framerate()
            ))),
            _ => Err(invalid("several models fit this motion; pass the dataset id")),
        }
    }

    /// Encodes the window centred on every frame of `seq`.
    pub fn embed_sequence(&self, id: &str, seq: &MotionSequence) -> Result<PhaseTrack> {
        let model = self.model(id)?;
        let feats = extract_features_with(seq, self.feature_options())?;
        self.embed_features(model, &feats)
    }

    pub fn embed_features(&self, model: &VqPae, feats: &FeatureSeries) -> Result<PhaseTrack> {
        if (feats.framerate - model.config.framerate).abs() > 1e-9 {
            return Err(invalid(format!(
                "motion is at {} fps but model `{}` expects {}",
                feats.framerate, model.id, model.config.framerate
            )));
        }
        if feats.channels() != model.config.channels {
            return Err(invalid(format!(
                "motion has {} feature channels but model `{}` expects {}",
                feats.channels(),
                model.id,
                model.config.channels
            )));
        }
        let t = model.window_len();
        let frames = feats.frames();
        if frames < t {
            return Err(invalid(format!(
                "sequence of {frames} frames is shorter than the window length {t}"
            )));
        }
        let starts: Vec<usize> = (0..frames).step_by(EMBED_CHUNK).collect();
        let chunks = starts
            .par_iter()
            .map(|&s| {
                let centers: Vec<usize> = (s..(s + EMBED_CHUNK).min(frames)).collect();
                let x = gather_windows(model, feats, &centers);
                let (enc, _) = model.encode_batch(&self.codebook, &x, None)?;
                Ok(points_of(&enc))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PhaseTrack {
            dataset: model.id.clone(),
            framerate: feats.framerate,
            points: chunks.into_iter().flatten().collect(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("format", "vqpae");
        ck.set_meta("datasets", self.dataset_ids().join(","));
        ck.set_meta("root_velocity", self.root_velocity);
        ck.set_meta("window_duration", self.window_duration);
        ck.set_meta("codebook.decay", self.codebook.decay);
        ck.set_meta("codebook.epsilon", self.codebook.epsilon);
        ck.insert("codebook.entries", self.codebook.entries.value.clone());
        for m in &self.models {
            let id = &m.id;
            let c = &m.config;
            ck.set_meta(format!("{id}.channels"), c.channels);
            ck.set_meta(format!("{id}.hidden"), c.hidden);
            ck.set_meta(format!("{id}.embedding_dim"), c.embedding_dim);
            ck.set_meta(format!("{id}.kernel"), c.kernel);
            ck.set_meta(format!("{id}.window_len"), c.window_len);
            ck.set_meta(format!("{id}.framerate"), c.framerate);
            ck.set_meta(format!("{id}.head_sharpness"), c.head_sharpness);
            ck.insert_module(id, m);
            ck.insert(format!("{id}.norm.mean"), row(&m.norm_mean));
            ck.insert(format!("{id}.norm.std"), row(&m.norm_std));
            if let Ok(u) = self.codebook.usage(id) {
                ck.insert(format!("codebook.usage.{id}"), row(u));
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("format")? != "vqpae" {
            return Err(invalid("checkpoint does not hold a VQ-PAE model"));
        }
        let mut codebook = Codebook::from_entries(ck.block("codebook.entries")?.clone(), 0)?;
        codebook.decay = ck.meta_parse("codebook.decay")?;
        codebook.epsilon = ck.meta_parse("codebook.epsilon")?;
        let mut models = Vec::new();
        for id in ck.meta("datasets")?.split(',').filter(|s| !s.is_empty()) {
            let config = ModelConfig {
                channels: ck.meta_parse(&format!("{id}.channels"))?,
                hidden: ck.meta_parse(&format!("{id}.hidden"))?,
                embedding_dim: ck.meta_parse(&format!("{id}.embedding_dim"))?,
                kernel: ck.meta_parse(&format!("{id}.kernel"))?,
                window_len: ck.meta_parse(&format!("{id}.window_len"))?,
                framerate: ck.meta_parse(&format!("{id}.framerate"))?,
                head_sharpness: ck.meta_parse(&format!("{id}.head_sharpness"))?,
            };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            let mut m = VqPae::new(id, config, &mut rng)?;
            ck.load_module(id, &mut m)?;
            m.norm_mean = ck.block(&format!("{id}.norm.mean"))?.data().to_vec();
            m.norm_std = ck.block(&format!("{id}.norm.std"))?.data().to_vec();
            if m.norm_mean.len() != m.config.channels || m.norm_std.len() != m.config.channels {
                return Err(Error::Shape(format!("normalization of `{id}` has the wrong length")));
            }
            if let Ok(u) = ck.block(&format!("codebook.usage.{id}")) {
                codebook.set_usage(id, u.data().to_vec())?;
            } else {
                codebook.attach(id);
            }
            models.push(m);
        }
        Ok(Self {
            codebook,
            models,
            root_velocity: ck.meta_parse("root_velocity")?,
            window_duration: ck.meta_parse("window_duration")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Total number of trainable values, codebook included.
    pub fn param_count(&self) -> usize {
        self.codebook.param_count() + self.models.iter().map(|m| m.param_count()).sum::<usize>()
    }
}

fn row(v: &[f64]) -> Tensor2 {
    Tensor2::from_vec(1, v.len(), v.to_vec()).expect("row vector")
}

/// Normalized windows centred on `centers`, laid out `J × B·T`.
pub fn gather_windows(model: &VqPae, feats: &FeatureSeries, centers: &[usize]) -> Tensor2 {
    let t = model.window_len();
    let frames = feats.frames();
    let j = feats.channels();
    let mut x = Tensor2::zeros(j, centers.len() * t);
    for c in 0..j {
        let src = feats.values.row(c);
        let (m, s) = (model.norm_mean[c], model.norm_std[c]);
        let dst = x.row_mut(c);
        for (w, &center) in centers.iter().enumerate() {
            for i in 0..t {
                dst[w * t + i] = (src[clamped_frame(center, t, i, frames)] - m) / s;
            }
        }
    }
    x
}

/// Phase points (pivot values) for every encoded window.
pub fn points_of(enc: &EncodeOutput) -> Vec<PhasePoint> {
    (0..enc.len())
        .map(|w| {
            let q = &enc.quantized[w];
            PhasePoint {
                phase: enc.phase[w],
                frequency: enc.frequency[w],
                amplitude_index: q.index,
                embedding: psi(&q.quantized, enc.phase[w]),
            }
        })
        .collect()
}
