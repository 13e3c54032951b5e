use std::io::{Read, Write};
use std::path::Path;

use crate::diff::checkpoint::{read_f64, read_str, read_u32, read_u64, write_str};
use crate::diff::Tensor2;
use crate::error::{invalid, shape, Error, Result};
use crate::manifold::PhaseTrack;
use crate::motion::{height_estimate, MotionSequence};

use super::{comparison_samples, periods, resample};

const MAGIC: &[u8; 6] = b"PMMDB\0";
pub const DATABASE_VERSION: u32 = 1;

/// Contiguous frame range of one source sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRange {
    pub name: String,
    pub start: usize,
    pub len: usize,
    pub height: f64,
}

impl SequenceRange {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Per-frame embeddings, frequencies and poses of a set of sequences that
/// share one skeleton, with everything the matchers need precomputed.
#[derive(Clone, Debug)]
pub struct EmbeddingDatabase {
    framerate: f64,
    dim: usize,
    joint_names: Vec<String>,
    sequences: Vec<SequenceRange>,
    sequence_of: Vec<usize>,
    phases: Vec<f64>,
    frequencies: Vec<f64>,
    amplitude_indices: Vec<usize>,
    embeddings: Vec<f64>,
    root_positions: Vec<[f64; 3]>,
    root_orientations: Vec<[f64; 4]>,
    poses: Vec<f64>,
    descriptors: Vec<f64>,
    periods: Vec<Option<usize>>,
    codebook: Option<Tensor2>,
    samples: usize,
    /// Frames whose period window (and continuation) stays in-sequence.
    candidates: Vec<usize>,
    /// `candidates[s]`'s window resampled to `samples` rows.
    resampled: Vec<f64>,
}

/// Pairs each track with its sequence and indexes the result. `codebook`
/// (rows are amplitudes) enables retrieval by amplitude index.
pub fn build_database(
    tracks: &[PhaseTrack],
    seqs: &[MotionSequence],
    codebook: Option<&Tensor2>,
) -> Result<EmbeddingDatabase> {
    if tracks.is_empty() || seqs.is_empty() {
        return Err(invalid("database needs at least one track and sequence"));
    }
    if tracks.len() != seqs.len() {
        return Err(invalid(format!(
            "{} tracks but {} sequences",
            tracks.len(),
            seqs.len()
        )));
    }
    let framerate = seqs[0].framerate();
    let joint_names = seqs[0].joint_names().to_vec();
    let dim = tracks[0].dim();
    let mut db = EmbeddingDatabase {
        framerate,
        dim,
        joint_names,
        sequences: Vec::new(),
        sequence_of: Vec::new(),
        phases: Vec::new(),
        frequencies: Vec::new(),
        amplitude_indices: Vec::new(),
        embeddings: Vec::new(),
        root_positions: Vec::new(),
        root_orientations: Vec::new(),
        poses: Vec::new(),
        descriptors: Vec::new(),
        periods: Vec::new(),
        codebook: codebook.cloned(),
        samples: comparison_samples(framerate),
        candidates: Vec::new(),
        resampled: Vec::new(),
    };
    for (track, seq) in tracks.iter().zip(seqs) {
        if track.len() != seq.frame_count() {
            return Err(invalid(format!(
                "track for `{}` has {} frames but the sequence has {}",
                seq.name,
                track.len(),
                seq.frame_count()
            )));
        }
        if (track.framerate - framerate).abs() > 1e-9 || (seq.framerate() - framerate).abs() > 1e-9 {
            return Err(invalid(format!("`{}` is not at {framerate} fps", seq.name)));
        }
        if seq.joint_names() != db.joint_names.as_slice() {
            return Err(invalid(format!(
                "`{}` uses a different skeleton from the rest of the database",
                seq.name
            )));
        }
        if track.dim() != dim {
            return Err(shape(format!(
                "track for `{}` has embedding dimension {} instead of {dim}",
                seq.name,
                track.dim()
            )));
        }
        if track.is_empty() {
            return Err(invalid(format!("`{}` has no frames", seq.name)));
        }
        let index = db.sequences.len();
        db.sequences.push(SequenceRange {
            name: seq.name.clone(),
            start: db.frequencies.len(),
            len: seq.frame_count(),
            height: height_estimate(seq),
        });
        for (f, p) in track.points.iter().enumerate() {
            db.sequence_of.push(index);
            db.phases.push(p.phase);
            db.frequencies.push(p.frequency);
            db.amplitude_indices.push(p.amplitude_index);
            db.embeddings.extend_from_slice(&p.embedding);
            db.root_positions.push(seq.root_position(f));
            db.root_orientations.push(seq.root_orientation(f));
            db.poses.extend_from_slice(seq.local_positions(f));
        }
    }
    db.finish()?;
    Ok(db)
}

impl EmbeddingDatabase {
    /// Fills every derived field from the per-frame data.
    fn finish(&mut self) -> Result<()> {
        if let Some(f) = self.frequencies.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
            return Err(invalid(format!("database frequency {f} is not a finite non-negative value")));
        }
        if let Some(cb) = &self.codebook {
            if cb.cols() != 2 * self.dim {
                return Err(shape(format!(
                    "codebook width {} does not match embedding dimension {}",
                    cb.cols(),
                    self.dim
                )));
            }
        }
        let pose_dim = self.pose_dim();
        self.descriptors = vec![0.0; self.poses.len()];
        self.periods = vec![None; self.len()];
        let dt = self.dt();
        for s in &self.sequences {
            for (i, v) in self.poses[s.start * pose_dim..s.end() * pose_dim].iter().enumerate() {
                self.descriptors[s.start * pose_dim + i] = v / s.height;
            }
            let local = periods(&self.frequencies[s.start..s.end()], dt);
            self.periods[s.start..s.end()].copy_from_slice(&local);
        }
        self.candidates = (0..self.len()).filter(|&k| self.periods[k].is_some()).collect();
        let (d, n) = (self.dim, self.samples);
        self.resampled = Vec::with_capacity(self.candidates.len() * n * d);
        for &k in &self.candidates {
            let t = self.periods[k].unwrap();
            self.resampled.extend(resample(self.embedding_window(k, t), d, n));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn framerate(&self) -> f64 {
        self.framerate
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.framerate
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn pose_dim(&self) -> usize {
        3 * self.joint_names.len()
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn sequences(&self) -> &[SequenceRange] {
        &self.sequences
    }

    pub fn sequence_of(&self, frame: usize) -> &SequenceRange {
        &self.sequences[self.sequence_of[frame]]
    }

    pub fn sequence_index(&self, frame: usize) -> usize {
        self.sequence_of[frame]
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn amplitude_indices(&self) -> &[usize] {
        &self.amplitude_indices
    }

    pub fn embedding(&self, frame: usize) -> &[f64] {
        &self.embeddings[frame * self.dim..(frame + 1) * self.dim]
    }

    /// Row-major embeddings of frames `start..start + len`.
    pub fn embedding_window(&self, start: usize, len: usize) -> &[f64] {
        &self.embeddings[start * self.dim..(start + len) * self.dim]
    }

    pub fn root_position(&self, frame: usize) -> [f64; 3] {
        self.root_positions[frame]
    }

    pub fn root_orientation(&self, frame: usize) -> [f64; 4] {
        self.root_orientations[frame]
    }

    pub fn pose(&self, frame: usize) -> &[f64] {
        let p = self.pose_dim();
        &self.poses[frame * p..(frame + 1) * p]
    }

    pub fn descriptor(&self, frame: usize) -> &[f64] {
        let p = self.pose_dim();
        &self.descriptors[frame * p..(frame + 1) * p]
    }

    /// Mean descriptor over every frame.
    pub fn mean_descriptor(&self) -> Vec<f64> {
        let p = self.pose_dim();
        let mut m = vec![0.0; p];
        for frame in self.descriptors.chunks_exact(p) {
            for (a, v) in m.iter_mut().zip(frame) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= self.len() as f64);
        m
    }

    pub fn period(&self, frame: usize) -> Option<usize> {
        self.periods[frame]
    }

    /// Frames usable as frequency-scaled match starts, ascending.
    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    /// Precomputed resampled period window of `candidates()[slot]`.
    pub fn resampled_window(&self, slot: usize) -> &[f64] {
        let w = self.samples * self.dim;
        &self.resampled[slot * w..(slot + 1) * w]
    }

    pub fn codebook(&self) -> Option<&Tensor2> {
        self.codebook.as_ref()
    }

    /// Start frames whose `len`-frame window stays inside one sequence.
    pub fn window_starts(&self, len: usize) -> Vec<usize> {
        self.sequences
            .iter()
            .filter(|s| s.len >= len)
            .flat_map(|s| s.start..=s.end() - len)
            .collect()
    }

    /// Longest source sequence in frames.
    pub fn longest_sequence(&self) -> usize {
        self.sequences.iter().map(|s| s.len).max().unwrap_or(0)
    }

    /// Binary layout (little-endian): magic, version u32, framerate f64,
    /// dim u32, joint names, codebook (rows u32, cols u32, values), then an
    /// index of `(name, start u64, len u64)` per sequence followed by the
    /// per-frame records `phase f amp_index(u64) embedding[d] root[3]
    /// orientation[4] local[3J]`.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&DATABASE_VERSION.to_le_bytes())?;
        w.write_all(&self.framerate.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.joint_names.len() as u32).to_le_bytes())?;
        for j in &self.joint_names {
            write_str(w, j)?;
        }
        let (rows, cols) = self.codebook.as_ref().map_or((0, 0), |c| c.shape());
        w.write_all(&(rows as u32).to_le_bytes())?;
        w.write_all(&(cols as u32).to_le_bytes())?;
        if let Some(c) = &self.codebook {
            for v in c.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&(self.sequences.len() as u32).to_le_bytes())?;
        for s in &self.sequences {
            write_str(w, &s.name)?;
            w.write_all(&(s.start as u64).to_le_bytes())?;
            w.write_all(&(s.len as u64).to_le_bytes())?;
        }
        for k in 0..self.len() {
            let mut rec = vec![self.phases[k], self.frequencies[k]];
            rec.extend_from_slice(self.embedding(k));
            rec.extend_from_slice(&self.root_positions[k]);
            rec.extend_from_slice(&self.root_orientations[k]);
            rec.extend_from_slice(self.pose(k));
            w.write_all(&(self.amplitude_indices[k] as u64).to_le_bytes())?;
            for v in rec {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, origin: &Path) -> Result<Self> {
        let fmt = |message: String| Error::Format {
            path: origin.to_path_buf(),
            message,
        };
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(fmt("not a matching database (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != DATABASE_VERSION {
            return Err(fmt(format!("unsupported database version {version}")));
        }
        let framerate = read_f64(r)?;
        let dim = read_u32(r)? as usize;
        let joints = read_u32(r)? as usize;
        let joint_names = (0..joints).map(|_| read_str(r)).collect::<Result<Vec<_>>>()?;
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let codebook = if rows == 0 {
            None
        } else {
            let values = (0..rows * cols).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
            Some(Tensor2::from_vec(rows, cols, values)?)
        };
        let count = read_u32(r)? as usize;
        let mut ranges = Vec::with_capacity(count);
        let mut expected = 0;
        for _ in 0..count {
            let name = read_str(r)?;
            let start = read_u64(r)? as usize;
            let len = read_u64(r)? as usize;
            if start != expected || len == 0 {
                return Err(fmt(format!("sequence index entry `{name}` is inconsistent")));
            }
            expected += len;
            ranges.push((name, start, len));
        }
        if ranges.is_empty() {
            return Err(fmt("database holds no sequences".into()));
        }
        let pose_dim = 3 * joints;
        let mut db = EmbeddingDatabase {
            framerate,
            dim,
            joint_names: joint_names.clone(),
            sequences: Vec::new(),
            sequence_of: Vec::new(),
            phases: Vec::new(),
            frequencies: Vec::new(),
            amplitude_indices: Vec::new(),
            embeddings: Vec::new(),
            root_positions: Vec::new(),
            root_orientations: Vec::new(),
            poses: Vec::new(),
            descriptors: Vec::new(),
            periods: Vec::new(),
            codebook,
            samples: comparison_samples(framerate),
            candidates: Vec::new(),
            resampled: Vec::new(),
        };
        for (index, (name, start, len)) in ranges.into_iter().enumerate() {
            let mut seq = MotionSequence::new(name.clone(), framerate, joint_names.clone())?;
            for _ in 0..len {
                let amp = read_u64(r).map_err(|_| fmt("truncated frame records".into()))? as usize;
                let mut vals = (0..2 + dim + 7 + pose_dim).map(|_| read_f64(r));
                let mut next = || vals.next().unwrap();
                let phase = next()?;
                let frequency = next()?;
                let embedding = (0..dim).map(|_| next()).collect::<Result<Vec<_>>>()?;
                let root = [next()?, next()?, next()?];
                let quat = [next()?, next()?, next()?, next()?];
                let local = (0..pose_dim).map(|_| next()).collect::<Result<Vec<_>>>()?;
                seq.push_frame(root, quat, &local)?;
                db.sequence_of.push(index);
                db.phases.push(phase);
                db.frequencies.push(frequency);
                db.amplitude_indices.push(amp);
                db.embeddings.extend(embedding);
                db.root_positions.push(root);
                db.root_orientations.push(quat);
                db.poses.extend(local);
            }
            db.sequences.push(SequenceRange {
                name,
                start,
                len,
                height: height_estimate(&seq),
            });
        }
        db.finish().map_err(|e| fmt(e.to_string()))?;
        Ok(db)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice(), path)
    }

    /// Copies frames `start..end` back out as a motion sequence.
    pub fn motion(&self, name: &str, start: usize, end: usize) -> Result<MotionSequence> {
        let mut seq = MotionSequence::new(name, self.framerate, self.joint_names.clone())?;
        for k in start..end {
            seq.push_frame(self.root_positions[k], self.root_orientations[k], self.pose(k))?;
        }
        Ok(seq)
    }
}
