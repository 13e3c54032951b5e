use std::cmp::Ordering;

use crate::error::{invalid, shape, Result};
use crate::manifold::{psi, PhaseTrack};
use crate::motion::{MotionSequence, PoseDescriptor};

use super::{inertialize, period, resample, squared_distance, EmbeddingDatabase};

/// Terms of one matching cost; `total = embedding + (descriptor + period)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostBreakdown {
    pub embedding: f64,
    /// Weighted descriptor term.
    pub descriptor: f64,
    /// Weighted period term (always zero for fixed-length matching).
    pub period: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transition {
    /// First segment of the stream.
    Start,
    /// The segment continues the previous one in the database; no blend.
    Contiguous,
    /// A jump; the segment was inertialized onto the previous tail.
    Blended,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DescriptorSource {
    Query,
    DatabaseMean,
}

/// One matching step.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub query_start: usize,
    pub query_len: usize,
    /// Chosen database start frame.
    pub db_start: usize,
    pub db_len: usize,
    /// Frames of the output stream written by this step.
    pub output_start: usize,
    pub output_len: usize,
    pub cost: CostBreakdown,
    pub transition: Transition,
}

#[derive(Clone, Debug)]
pub struct MatchOutput {
    pub steps: Vec<MatchResult>,
    pub motion: MotionSequence,
    pub descriptor_source: DescriptorSource,
    /// Set when the query ran out of complete periods before its end.
    pub truncated: Option<String>,
}

impl MatchOutput {
    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost.total).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Retrieval {
    pub start: usize,
    pub len: usize,
    pub sequence: String,
    pub cost: f64,
    /// The synthetic one-cycle query, row-major `len × d`.
    pub query: Vec<f64>,
    pub motion: MotionSequence,
}

struct Candidate {
    frame: usize,
    slot: usize,
    descriptor: f64,
    period: f64,
    cheap: f64,
}

/// Exact argmin over `candidates` with ties going to the lowest frame.
///
/// Candidates are visited in order of their cheap terms so the scan can stop
/// once the cheap term alone exceeds the best total, and `embedding` may
/// abandon a candidate as soon as its running sum plus the cheap term does.
/// Both cut-offs rely only on every term being non-negative, so the result
/// equals a full scan.
fn argmin(
    mut candidates: Vec<Candidate>,
    embedding: impl Fn(&Candidate, f64) -> Option<f64>,
) -> Option<(usize, CostBreakdown)> {
    candidates.sort_by(|a, b| a.cheap.total_cmp(&b.cheap).then(a.frame.cmp(&b.frame)));
    let mut best: Option<(usize, CostBreakdown)> = None;
    for c in &candidates {
        let bound = best.map_or(f64::INFINITY, |b| b.1.total);
        if c.cheap > bound {
            break;
        }
        let Some(e) = embedding(c, bound) else {
            continue;
        };
        let total = e + c.cheap;
        let better = match best {
            None => true,
            Some((k, b)) => match total.partial_cmp(&b.total) {
                Some(Ordering::Less) => true,
                Some(Ordering::Equal) => c.frame < k,
                _ => false,
            },
        };
        if better {
            best = Some((
                c.frame,
                CostBreakdown {
                    embedding: e,
                    descriptor: c.descriptor,
                    period: c.period,
                    total,
                },
            ));
        }
    }
    best
}

/// Row-major squared distance that gives up once `acc + cheap > bound`.
fn bounded_distance(a: &[f64], b: &[f64], dim: usize, cheap: f64, bound: f64) -> Option<f64> {
    let mut acc = 0.0;
    for (ra, rb) in a.chunks_exact(dim).zip(b.chunks_exact(dim)) {
        for (x, y) in ra.iter().zip(rb) {
            acc += (x - y) * (x - y);
        }
        if acc + cheap > bound {
            return None;
        }
    }
    Some(acc)
}

fn check_query(query: &PhaseTrack, db: &EmbeddingDatabase) -> Result<()> {
    if query.is_empty() {
        return Err(invalid("query track is empty"));
    }
    if query.dim() != db.dim() {
        return Err(shape(format!(
            "query embeddings have dimension {} but the database has {}",
            query.dim(),
            db.dim()
        )));
    }
    if (query.framerate - db.framerate()).abs() > 1e-9 {
        return Err(invalid(format!(
            "query is at {} fps but the database is at {}",
            query.framerate,
            db.framerate()
        )));
    }
    Ok(())
}

fn start_descriptor(db: &EmbeddingDatabase, initial: Option<&PoseDescriptor>) -> (Vec<f64>, DescriptorSource) {
    match initial {
        Some(d) if d.0.len() == db.pose_dim() => (d.0.clone(), DescriptorSource::Query),
        _ => (db.mean_descriptor(), DescriptorSource::DatabaseMean),
    }
}

fn flat_embeddings(track: &PhaseTrack, start: usize, len: usize) -> Vec<f64> {
    track.points[start..start + len]
        .iter()
        .flat_map(|p| p.embedding.iter().copied())
        .collect()
}

/// Writes matched segments into the output stream, keeping the root path
/// continuous and blending pose jumps.
struct Emitter<'a> {
    db: &'a EmbeddingDatabase,
    motion: MotionSequence,
    blend_frames: usize,
    /// Horizontal root offset applied to the current segment.
    offset: [f64; 3],
    /// Where the root would be on the frame after the last segment.
    anchor: Option<[f64; 3]>,
    /// Pose the last segment would have shown next.
    tail: Option<Vec<f64>>,
    /// Database frame that would continue the last segment seamlessly.
    natural_next: Option<usize>,
}

impl<'a> Emitter<'a> {
    fn new(db: &'a EmbeddingDatabase, blend_frames: usize) -> Result<Self> {
        Ok(Self {
            db,
            motion: MotionSequence::new("match", db.framerate(), db.joint_names().to_vec())?,
            blend_frames,
            offset: [0.0; 3],
            anchor: None,
            tail: None,
            natural_next: None,
        })
    }

    /// Emits database frames `k..k + src_len` stretched to `out_len` frames.
    fn emit(&mut self, k: usize, src_len: usize, out_len: usize) -> Result<Transition> {
        let db = self.db;
        let seq_end = db.sequence_of(k).end();
        let transition = match (self.natural_next, &self.anchor) {
            (_, None) => Transition::Start,
            (Some(n), _) if n == k => Transition::Contiguous,
            _ => Transition::Blended,
        };
        if let Some(anchor) = self.anchor {
            let r = db.root_position(k);
            self.offset = [anchor[0] - r[0], 0.0, anchor[2] - r[2]];
        }
        let mut roots = Vec::with_capacity(out_len);
        let mut quats = Vec::with_capacity(out_len);
        let mut poses = Vec::with_capacity(out_len);
        for m in 0..out_len {
            let u = m as f64 * src_len as f64 / out_len as f64;
            let i0 = u.floor() as usize;
            let frac = u - i0 as f64;
            let a = k + i0;
            if frac == 0.0 {
                roots.push(db.root_position(a));
                quats.push(db.root_orientation(a));
                poses.push(db.pose(a).to_vec());
            } else {
                let b = a + 1;
                roots.push(lerp3(db.root_position(a), db.root_position(b), frac));
                quats.push(nlerp(db.root_orientation(a), db.root_orientation(b), frac));
                poses.push(
                    db.pose(a)
                        .iter()
                        .zip(db.pose(b))
                        .map(|(x, y)| x + (y - x) * frac)
                        .collect(),
                );
            }
        }
        if transition == Transition::Blended {
            poses = inertialize(self.tail.as_ref().unwrap(), &poses, self.blend_frames);
        }
        for ((r, q), p) in roots.iter().zip(&quats).zip(&poses) {
            let r = [r[0] + self.offset[0], r[1], r[2] + self.offset[2]];
            self.motion.push_frame(r, *q, p)?;
        }
        let next = k + src_len;
        let (cont_root, tail) = if next < seq_end {
            (db.root_position(next), db.pose(next).to_vec())
        } else {
            let last = seq_end - 1;
            let r = db.root_position(last);
            let step = if last > db.sequence_of(k).start {
                let p = db.root_position(last - 1);
                [r[0] - p[0], 0.0, r[2] - p[2]]
            } else {
                [0.0; 3]
            };
            ([r[0] + step[0], r[1], r[2] + step[2]], db.pose(last).to_vec())
        };
        self.anchor = Some([cont_root[0] + self.offset[0], cont_root[1], cont_root[2] + self.offset[2]]);
        self.tail = Some(tail);
        self.natural_next = (next < seq_end).then_some(next);
        Ok(transition)
    }
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn nlerp(a: [f64; 4], mut b: [f64; 4], t: f64) -> [f64; 4] {
    if a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() < 0.0 {
        b.iter_mut().for_each(|v| *v = -*v);
    }
    let q: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + (y - x) * t).collect();
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

fn descriptor_terms(db: &EmbeddingDatabase, j_start: &[f64], frame: usize) -> f64 {
    squared_distance(j_start, db.descriptor(frame))
}

/// Fixed-length matching: every `t0` query frames, replay the database
/// window whose embeddings and start pose fit best.
pub fn match_fixed(
    query: &PhaseTrack,
    db: &EmbeddingDatabase,
    t0: usize,
    lambda: f64,
    initial: Option<&PoseDescriptor>,
    blend_frames: usize,
) -> Result<MatchOutput> {
    check_query(query, db)?;
    if t0 == 0 {
        return Err(invalid("t0 must be at least 1"));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(invalid(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    let starts = db.window_starts(t0);
    if starts.is_empty() {
        return Err(invalid(format!("database has no window of {t0} frames")));
    }
    let dim = db.dim();
    let (mut j_start, descriptor_source) = start_descriptor(db, initial);
    let mut emitter = Emitter::new(db, blend_frames)?;
    let mut steps = Vec::new();
    let mut i = 0;
    while i < query.len() {
        let m = t0.min(query.len() - i);
        let p = flat_embeddings(query, i, m);
        let candidates = starts
            .iter()
            .map(|&k| {
                let descriptor = lambda * descriptor_terms(db, &j_start, k);
                Candidate {
                    frame: k,
                    slot: 0,
                    descriptor,
                    period: 0.0,
                    cheap: descriptor,
                }
            })
            .collect();
        let (k, cost) = argmin(candidates, |c, bound| {
            bounded_distance(&p, db.embedding_window(c.frame, m), dim, c.cheap, bound)
        })
        .expect("candidate set is non-empty");
        let output_start = emitter.motion.frame_count();
        let transition = emitter.emit(k, t0, t0)?;
        let end = db.sequence_of(k).end();
        j_start = db.descriptor((k + t0).min(end - 1)).to_vec();
        steps.push(MatchResult {
            query_start: i,
            query_len: m,
            db_start: k,
            db_len: t0,
            output_start,
            output_len: t0,
            cost,
            transition,
        });
        i += t0;
    }
    Ok(MatchOutput {
        steps,
        motion: emitter.motion,
        descriptor_source,
        truncated: None,
    })
}

/// Frequency-scaled matching: step through the query one period at a time
/// and replay the best database period, time-scaled to the query's length.
pub fn match_frequency_scaled(
    query: &PhaseTrack,
    db: &EmbeddingDatabase,
    lambda1: f64,
    lambda2: f64,
    initial: Option<&PoseDescriptor>,
    blend_frames: usize,
) -> Result<MatchOutput> {
    check_query(query, db)?;
    for (name, v) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(invalid(format!("{name} must be finite and non-negative, got {v}")));
        }
    }
    if db.candidates().is_empty() {
        return Err(invalid("no database frame has a complete period"));
    }
    let (dim, samples) = (db.dim(), db.samples());
    let freqs = query.frequencies();
    if let Some(f) = freqs.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
        return Err(invalid(format!("query frequency {f} is not a finite non-negative value")));
    }
    let (mut j_start, descriptor_source) = start_descriptor(db, initial);
    let mut emitter = Emitter::new(db, blend_frames)?;
    let mut steps = Vec::new();
    let mut truncated = None;
    let mut i = 0;
    while i < query.len() {
        let Some(ti) = period(&freqs, i, query.dt()) else {
            truncated = Some(format!(
                "query frame {i} has no complete period before the end; output stops after {i} of {} frames",
                query.len()
            ));
            break;
        };
        let p = resample(&flat_embeddings(query, i, ti), dim, samples);
        let candidates = db
            .candidates()
            .iter()
            .enumerate()
            .map(|(slot, &k)| {
                let tk = db.period(k).unwrap();
                let descriptor = lambda1 * descriptor_terms(db, &j_start, k);
                let dt = ti as f64 - tk as f64;
                let period = lambda2 * dt * dt;
                Candidate {
                    frame: k,
                    slot,
                    descriptor,
                    period,
                    cheap: descriptor + period,
                }
            })
            .collect();
        let (k, cost) = argmin(candidates, |c, bound| {
            bounded_distance(&p, db.resampled_window(c.slot), dim, c.cheap, bound)
        })
        .expect("candidate set is non-empty");
        let tk = db.period(k).unwrap();
        let output_start = emitter.motion.frame_count();
        let transition = emitter.emit(k, tk, ti)?;
        j_start = db.descriptor(k + tk).to_vec();
        steps.push(MatchResult {
            query_start: i,
            query_len: ti,
            db_start: k,
            db_len: tk,
            output_start,
            output_len: ti,
            cost,
            transition,
        });
        i += ti;
    }
    Ok(MatchOutput {
        steps,
        motion: emitter.motion,
        descriptor_source,
        truncated,
    })
}

/// Finds the database cycle closest to amplitude `a` played at frequency `f`.
pub fn retrieve_with_amplitude(db: &EmbeddingDatabase, a: &[f64], f: f64) -> Result<Retrieval> {
    if a.len() != 2 * db.dim() {
        return Err(shape(format!(
            "amplitude has {} values but the database needs {}",
            a.len(),
            2 * db.dim()
        )));
    }
    let nyquist = 0.5 * db.framerate();
    if !(f > 0.0 && f < nyquist) {
        return Err(invalid(format!("frequency {f} Hz is outside (0, {nyquist})")));
    }
    let step = f * db.dt();
    let n = (1.0 / step).round() as usize;
    if n > db.longest_sequence() {
        return Err(invalid(format!(
            "one cycle at {f} Hz spans {n} frames, longer than any database sequence"
        )));
    }
    let query: Vec<f64> = (0..n).flat_map(|i| psi(a, i as f64 * step)).collect();
    let (dim, samples) = (db.dim(), db.samples());
    let q = resample(&query, dim, samples);
    let mut best: Option<(usize, f64)> = None;
    for k in db.window_starts(n) {
        let d = squared_distance(&q, &resample(db.embedding_window(k, n), dim, samples));
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((k, d));
        }
    }
    let (start, cost) = best.expect("longest sequence holds at least one window");
    let sequence = db.sequence_of(start).name.clone();
    Ok(Retrieval {
        start,
        len: n,
        motion: db.motion(&format!("{sequence}_retrieved"), start, start + n)?,
        sequence,
        cost,
        query,
    })
}

/// [`retrieve_with_amplitude`] with the amplitude taken from the database's
/// stored codebook.
pub fn retrieve_by_frequency(db: &EmbeddingDatabase, amplitude_index: usize, f: f64) -> Result<Retrieval> {
    let cb = db
        .codebook()
        .ok_or_else(|| invalid("database was built without a codebook"))?;
    if amplitude_index >= cb.rows() {
        return Err(invalid(format!(
            "amplitude index {amplitude_index} is outside a codebook of {}",
            cb.rows()
        )));
    }
    retrieve_with_amplitude(db, cb.row(amplitude_index), f)
}
