//! Motion sequences, the native text format, velocity features, windows and
//! pose descriptors.
//!
//! The native format is a single header line
//!
//! ```text
//! MOTION v1 framerate=<f> joints=<n> names=<comma list>
//! ```
//!
//! followed by one line per frame holding the root position (3 values), the
//! root orientation quaternion (4 values, `w` first) and the root-local
//! position of every joint (3 values each). Values are written with the
//! shortest decimal representation that parses back to the same `f64`, so a
//! save/load cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;

use crate::diff::Tensor2;
use crate::error::{invalid, Error, Result};

/// Index of the vertical axis in every 3-vector.
pub const UP_AXIS: usize = 1;

const ROOT_VALUES: usize = 7;

/// A framerate-stamped sequence of poses for one character.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub name: String,
    framerate: f64,
    joint_names: Vec<String>,
    root_position: Vec<[f64; 3]>,
    /// Unit quaternions, `w` first.
    root_orientation: Vec<[f64; 4]>,
    /// `frame_count × joint_count × 3`, root-local.
    local: Vec<f64>,
}

impl MotionSequence {
    pub fn new(name: impl Into<String>, framerate: f64, joint_names: Vec<String>) -> Result<Self> {
        if !(framerate.is_finite() && framerate > 0.0) {
            return Err(invalid(format!("framerate must be positive, got {framerate}")));
        }
        if joint_names.is_empty() {
            return Err(invalid("a motion needs at least one joint"));
        }
        for n in &joint_names {
            if n.is_empty() || n.contains(',') || n.contains(char::is_whitespace) {
                return Err(invalid(format!("joint name `{n}` must be non-empty without commas or spaces")));
            }
        }
        Ok(Self {
            name: name.into(),
            framerate,
            joint_names,
            root_position: Vec::new(),
            root_orientation: Vec::new(),
            local: Vec::new(),
        })
    }

    /// Appends one frame; `local` holds `3 · joint_count` values.
    pub fn push_frame(&mut self, root_position: [f64; 3], root_orientation: [f64; 4], local: &[f64]) -> Result<()> {
        if local.len() != 3 * self.joint_count() {
            return Err(Error::RaggedFrame {
                line: self.frame_count() + 2,
                expected: ROOT_VALUES + 3 * self.joint_count(),
                found: ROOT_VALUES + local.len(),
            });
        }
        let all = root_position.iter().chain(&root_orientation).chain(local);
        if !all.clone().all(|v| v.is_finite()) {
            return Err(invalid(format!("frame {} has non-finite values", self.frame_count())));
        }
        self.root_position.push(root_position);
        self.root_orientation.push(root_orientation);
        self.local.extend_from_slice(local);
        Ok(())
    }

    pub fn framerate(&self) -> f64 {
        self.framerate
    }

    /// Frame time `1 / framerate`.
    pub fn dt(&self) -> f64 {
        1.0 / self.framerate
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn frame_count(&self) -> usize {
        self.root_position.len()
    }

    pub fn root_position(&self, frame: usize) -> [f64; 3] {
        self.root_position[frame]
    }

    pub fn root_orientation(&self, frame: usize) -> [f64; 4] {
        self.root_orientation[frame]
    }

    /// Root-local joint positions of one frame, `3 · joint_count` values.
    pub fn local_positions(&self, frame: usize) -> &[f64] {
        let n = 3 * self.joint_count();
        &self.local[frame * n..(frame + 1) * n]
    }

    pub fn local_positions_mut(&mut self, frame: usize) -> &mut [f64] {
        let n = 3 * self.joint_count();
        &mut self.local[frame * n..(frame + 1) * n]
    }

    pub fn set_root_position(&mut self, frame: usize, p: [f64; 3]) {
        self.root_position[frame] = p;
    }

    /// Copy of frames `start..end` under a new name.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frame_count() {
            return Err(invalid(format!(
                "frame range {start}..{end} is not inside 0..{}",
                self.frame_count()
            )));
        }
        let n = 3 * self.joint_count();
        Ok(Self {
            name: self.name.clone(),
            framerate: self.framerate,
            joint_names: self.joint_names.clone(),
            root_position: self.root_position[start..end].to_vec(),
            root_orientation: self.root_orientation[start..end].to_vec(),
            local: self.local[start * n..end * n].to_vec(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "MOTION v1 framerate={} joints={} names={}\n",
            self.framerate,
            self.joint_count(),
            self.joint_names.join(",")
        );
        for f in 0..self.frame_count() {
            let vals = self.root_position[f]
                .iter()
                .chain(&self.root_orientation[f])
                .chain(self.local_positions(f));
            for (i, v) in vals.enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.frame_count() == 0 {
            return Err(invalid("cannot save a motion without frames"));
        }
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(&text, &path.display().to_string(), name)
    }

    /// Parses the native format. `origin` only labels error messages.
    pub fn parse(text: &str, origin: &str, name: impl Into<String>) -> Result<Self> {
        let perr = |line: usize, field: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            field,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| perr(1, 0, "empty file".into()))?;
        let mut tokens = header.split_whitespace();
        if tokens.next() != Some("MOTION") || tokens.next() != Some("v1") {
            return Err(perr(1, 1, "expected header `MOTION v1`".into()));
        }
        let (mut framerate, mut joints, mut names) = (None, None, None);
        for (i, tok) in tokens.enumerate() {
            let field = i + 3;
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| perr(1, field, format!("expected key=value, got `{tok}`")))?;
            match key {
                "framerate" => {
                    framerate = Some(
                        value
                            .parse::<f64>()
                            .map_err(|_| perr(1, field, format!("bad framerate `{value}`")))?,
                    )
                }
                "joints" => {
                    joints = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| perr(1, field, format!("bad joint count `{value}`")))?,
                    )
                }
                "names" => names = Some(value.split(',').map(str::to_string).collect::<Vec<_>>()),
                _ => return Err(perr(1, field, format!("unknown header key `{key}`"))),
            }
        }
        let framerate = framerate.ok_or_else(|| perr(1, 0, "missing framerate".into()))?;
        if !(framerate.is_finite() && framerate > 0.0) {
            return Err(perr(1, 0, format!("framerate must be positive, got {framerate}")));
        }
        let joints = joints.ok_or_else(|| perr(1, 0, "missing joint count".into()))?;
        let names = names.unwrap_or_else(|| (0..joints).map(|j| format!("j{j}")).collect());
        if names.len() != joints {
            return Err(perr(1, 0, format!("{} names given for {joints} joints", names.len())));
        }
        let mut seq = Self::new(name, framerate, names).map_err(|e| perr(1, 0, e.to_string()))?;
        let expected = ROOT_VALUES + 3 * joints;
        let mut vals = Vec::with_capacity(expected);
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = idx + 1;
            vals.clear();
            for (f, tok) in line.split_whitespace().enumerate() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| perr(line_no, f + 1, format!("`{tok}` is not a number")))?;
                if !v.is_finite() {
                    return Err(perr(line_no, f + 1, "value is not finite".into()));
                }
                vals.push(v);
            }
            if vals.len() != expected {
                return Err(Error::RaggedFrame {
                    line: line_no,
                    expected,
                    found: vals.len(),
                });
            }
            seq.push_frame(
                [vals[0], vals[1], vals[2]],
                [vals[3], vals[4], vals[5], vals[6]],
                &vals[ROOT_VALUES..],
            )?;
        }
        if seq.frame_count() == 0 {
            return Err(perr(1, 0, "motion has no frames".into()));
        }
        Ok(seq)
    }
}

/// Rotates `v` by the inverse of the unit quaternion `q = (w, x, y, z)`.
pub fn rotate_inverse(q: [f64; 4], v: [f64; 3]) -> [f64; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, u) = if n > 0.0 {
        (q[0] / n, [-q[1] / n, -q[2] / n, -q[3] / n])
    } else {
        (1.0, [0.0; 3])
    };
    let t = cross(u, v).map(|c| 2.0 * c);
    let ut = cross(u, t);
    [
        v[0] + w * t[0] + ut[0],
        v[1] + w * t[1] + ut[1],
        v[2] + w * t[2] + ut[2],
    ]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Per-frame velocity channels, `J × T`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSeries {
    pub framerate: f64,
    /// `channels × frames`
    pub values: Tensor2,
}

impl FeatureSeries {
    pub fn channels(&self) -> usize {
        self.values.rows()
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.framerate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureOptions {
    /// Appends the root linear velocity expressed in the root frame as three
    /// extra channels after the joint channels.
    pub root_velocity: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self { root_velocity: true }
    }
}

/// Joint velocities in the root frame only (`J = 3 · joint_count`).
pub fn extract_features(seq: &MotionSequence) -> Result<FeatureSeries> {
    extract_features_with(seq, FeatureOptions { root_velocity: false })
}

/// Forward-difference velocities; the last frame repeats the previous one.
pub fn extract_features_with(seq: &MotionSequence, opts: FeatureOptions) -> Result<FeatureSeries> {
    let t = seq.frame_count();
    if t < 2 {
        return Err(invalid(format!("feature extraction needs at least 2 frames, got {t}")));
    }
    let nj = 3 * seq.joint_count();
    let channels = nj + if opts.root_velocity { 3 } else { 0 };
    let inv_dt = seq.framerate();
    let mut values = Tensor2::zeros(channels, t);
    for i in 0..t - 1 {
        let (a, b) = (seq.local_positions(i), seq.local_positions(i + 1));
        for c in 0..nj {
            values.set(c, i, (b[c] - a[c]) * inv_dt);
        }
        if opts.root_velocity {
            let (p, q) = (seq.root_position(i), seq.root_position(i + 1));
            let world = [(q[0] - p[0]) * inv_dt, (q[1] - p[1]) * inv_dt, (q[2] - p[2]) * inv_dt];
            let v = rotate_inverse(seq.root_orientation(i), world);
            for (k, vk) in v.iter().enumerate() {
                values.set(nj + k, i, *vk);
            }
        }
    }
    for c in 0..channels {
        let prev = values.get(c, t - 2);
        values.set(c, t - 1, prev);
    }
    Ok(FeatureSeries {
        framerate: seq.framerate(),
        values,
    })
}

/// Odd window length for `duration` seconds: `floor(duration · framerate)`,
/// bumped to the next odd number when even.
pub fn window_length(duration: f64, framerate: f64) -> Result<usize> {
    if !(duration > 0.0 && framerate > 0.0 && (duration * framerate).is_finite()) {
        return Err(invalid(format!(
            "window duration {duration} s at {framerate} fps is not positive"
        )));
    }
    let n = ((duration * framerate) + 1e-9).floor() as usize;
    Ok(if n % 2 == 0 { n + 1 } else { n })
}

/// Relative timing `t_i = (i − (T−1)/2) · dt` for `i = 0..T`.
pub fn relative_timing(len: usize, dt: f64) -> Vec<f64> {
    let half = (len / 2) as isize;
    (0..len as isize).map(|i| (i - half) as f64 * dt).collect()
}

/// Source frame for window row `i` centred on `center`, clamped to the
/// sequence bounds.
#[inline]
pub fn clamped_frame(center: usize, len: usize, i: usize, frames: usize) -> usize {
    let idx = center as isize + i as isize - (len / 2) as isize;
    idx.clamp(0, frames as isize - 1) as usize
}

/// An odd-length feature window around a pivot frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub center: usize,
    /// `channels × len`
    pub features: Tensor2,
    pub timing: Vec<f64>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.timing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timing.is_empty()
    }

    pub fn pivot(&self) -> usize {
        self.len() / 2
    }
}

/// Window of `duration` seconds centred on `center`. Rows that fall outside
/// the sequence repeat the nearest boundary frame.
pub fn window_at(features: &FeatureSeries, center: usize, duration: f64) -> Result<Window> {
    let len = window_length(duration, features.framerate)?;
    window_with_len(features, center, len)
}

pub fn window_with_len(features: &FeatureSeries, center: usize, len: usize) -> Result<Window> {
    let frames = features.frames();
    if len % 2 == 0 {
        return Err(invalid(format!("window length must be odd, got {len}")));
    }
    if frames < len {
        return Err(invalid(format!(
            "sequence of {frames} frames is shorter than the window length {len}"
        )));
    }
    if center >= frames {
        return Err(invalid(format!("window center {center} is outside 0..{frames}")));
    }
    let channels = features.channels();
    let mut out = Tensor2::zeros(channels, len);
    for c in 0..channels {
        let src = features.values.row(c);
        let dst = out.row_mut(c);
        for (i, d) in dst.iter_mut().enumerate() {
            *d = src[clamped_frame(center, len, i, frames)];
        }
    }
    Ok(Window {
        center,
        features: out,
        timing: relative_timing(len, features.dt()),
    })
}

/// Normalized root-local joint positions of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseDescriptor(pub Vec<f64>);

impl PoseDescriptor {
    pub fn distance_squared(&self, other: &PoseDescriptor) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Vertical extent of the first frame over every joint and the root origin;
/// falls back to 1 for flat skeletons.
pub fn height_estimate(seq: &MotionSequence) -> f64 {
    if seq.frame_count() == 0 {
        return 1.0;
    }
    let ys = seq.local_positions(0).chunks_exact(3).map(|p| p[UP_AXIS]);
    let (lo, hi) = ys.fold((0.0f64, 0.0f64), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let h = hi - lo;
    if h > 1e-9 {
        h
    } else {
        1.0
    }
}

pub fn pose_descriptor(seq: &MotionSequence, frame: usize) -> Result<PoseDescriptor> {
    if frame >= seq.frame_count() {
        return Err(invalid(format!(
            "frame {frame} is outside 0..{}",
            seq.frame_count()
        )));
    }
    let h = height_estimate(seq);
    Ok(PoseDescriptor(
        seq.local_positions(frame).iter().map(|v| v / h).collect(),
    ))
}
