//! Procedural cyclic gaits for two toy characters with ground-truth phase,
//! frequency and class labels.
//!
//! Every joint coordinate oscillates as `a · sin(2π(f·t + φ₀) + θ)` around a
//! rest position, with class-specific amplitudes and per-joint offsets `θ`.
//! The root moves forward along +z at a class-specific constant speed and
//! never turns, so its orientation is the identity quaternion.

use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::Config;
use crate::error::{invalid, Error, Result};
use crate::motion::MotionSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Template {
    Biped,
    Quadruped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GaitClass {
    Idle,
    Walk,
    Run,
}

impl GaitClass {
    pub const ALL: [GaitClass; 3] = [GaitClass::Idle, GaitClass::Walk, GaitClass::Run];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Template::Biped => "biped",
            Template::Quadruped => "quadruped",
        })
    }
}

impl FromStr for Template {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biped" => Ok(Template::Biped),
            "quadruped" => Ok(Template::Quadruped),
            _ => Err(invalid(format!("unknown template `{s}` (expected biped or quadruped)"))),
        }
    }
}

impl fmt::Display for GaitClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GaitClass::Idle => "idle",
            GaitClass::Walk => "walk",
            GaitClass::Run => "run",
        })
    }
}

impl FromStr for GaitClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idle" => Ok(GaitClass::Idle),
            "walk" => Ok(GaitClass::Walk),
            "run" => Ok(GaitClass::Run),
            _ => Err(invalid(format!("unknown class `{s}` (expected idle, walk or run)"))),
        }
    }
}

/// Oscillation of one joint: rest position, per-axis amplitude and per-axis
/// angular offset in cycles.
#[derive(Clone, Copy, Debug)]
struct JointMotion {
    rest: [f64; 3],
    amp: [f64; 3],
    offset: [f64; 3],
}

struct ClassProfile {
    frequency: f64,
    speed: f64,
    /// Multiplies the template's unit amplitudes.
    gain: f64,
}

impl Template {
    pub fn joint_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Template::Biped => &["spine", "l_foot", "r_foot", "l_hand", "r_hand"],
            Template::Quadruped => &[
                "neck", "head", "tail", "fl_paw", "fr_paw", "hl_paw", "hr_paw", "l_knee", "r_knee",
            ],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn joint_count(self) -> usize {
        self.joint_names().len()
    }

    /// Nominal gait frequency of a class in Hz.
    pub fn base_frequency(self, class: GaitClass) -> f64 {
        self.profile(class).frequency
    }

    fn profile(self, class: GaitClass) -> ClassProfile {
        let (frequency, speed, gain) = match (self, class) {
            (Template::Biped, GaitClass::Idle) => (1.0, 0.0, 0.4),
            (Template::Biped, GaitClass::Walk) => (1.6, 1.4, 1.0),
            (Template::Biped, GaitClass::Run) => (2.6, 3.5, 2.2),
            (Template::Quadruped, GaitClass::Idle) => (1.1, 0.0, 0.4),
            (Template::Quadruped, GaitClass::Walk) => (1.9, 1.2, 1.0),
            (Template::Quadruped, GaitClass::Run) => (3.0, 3.0, 2.2),
        };
        ClassProfile { frequency, speed, gain }
    }

    /// Unit-gain joint motions. Idle motion keeps only a slow sway of the
    /// upper body; the per-class gain scales everything else.
    fn joints(self, class: GaitClass) -> Vec<JointMotion> {
        let idle = class == GaitClass::Idle;
        let limb = if idle { 0.3 } else { 1.0 };
        let j = |rest: [f64; 3], amp: [f64; 3], offset: [f64; 3]| JointMotion { rest, amp, offset };
        match self {
            Template::Biped => vec![
                j([0.0, 0.45, 0.0], [0.02, 0.03 * limb + 0.02, 0.03], [0.25, 0.0, 0.5]),
                j([-0.12, -0.9, 0.0], [0.01, 0.06 * limb, 0.25 * limb], [0.0, 0.25, 0.0]),
                j([0.12, -0.9, 0.0], [0.01, 0.06 * limb, 0.25 * limb], [0.5, 0.75, 0.5]),
                j([-0.25, 0.1, 0.0], [0.02, 0.04, 0.18], [0.5, 0.25, 0.5]),
                j([0.25, 0.1, 0.0], [0.02, 0.04, 0.18], [0.0, 0.75, 0.0]),
            ],
            Template::Quadruped => vec![
                j([0.0, 0.15, 0.35], [0.01, 0.04, 0.03], [0.0, 0.25, 0.5]),
                j([0.0, 0.3, 0.5], [0.02, 0.06, 0.04], [0.1, 0.35, 0.6]),
                j([0.0, 0.1, -0.45], [0.08, 0.05, 0.02], [0.3, 0.0, 0.5]),
                j([-0.1, -0.5, 0.3], [0.0, 0.05 * limb, 0.16 * limb], [0.0, 0.25, 0.0]),
                j([0.1, -0.5, 0.3], [0.0, 0.05 * limb, 0.16 * limb], [0.5, 0.75, 0.5]),
                j([-0.1, -0.5, -0.3], [0.0, 0.05 * limb, 0.16 * limb], [0.5, 0.75, 0.5]),
                j([0.1, -0.5, -0.3], [0.0, 0.05 * limb, 0.16 * limb], [0.0, 0.25, 0.0]),
                j([-0.1, -0.25, -0.28], [0.0, 0.03 * limb, 0.08 * limb], [0.45, 0.7, 0.45]),
                j([0.1, -0.25, -0.28], [0.0, 0.03 * limb, 0.08 * limb], [0.95, 0.2, 0.95]),
            ],
        }
    }
}

/// Parameters of one generated sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GaitSpec {
    pub template: Template,
    pub class: GaitClass,
    /// Gait frequency `f*` in Hz.
    pub frequency: f64,
    /// Multiplier on the class amplitude profile.
    pub amplitude_scale: f64,
    /// Standard deviation of Gaussian position noise.
    pub noise: f64,
    pub duration: f64,
    pub framerate: f64,
    /// Phase at `t = 0` in cycles.
    pub initial_phase: f64,
    pub seed: u64,
}

impl GaitSpec {
    /// Class defaults: nominal frequency, unit amplitude, no noise.
    pub fn new(template: Template, class: GaitClass) -> Self {
        Self {
            template,
            class,
            frequency: template.base_frequency(class),
            amplitude_scale: 1.0,
            noise: 0.0,
            duration: 10.0,
            framerate: 60.0,
            initial_phase: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(format!("{what} must be positive, got {v}")))
            }
        };
        positive(self.frequency, "frequency")?;
        positive(self.duration, "duration")?;
        positive(self.framerate, "framerate")?;
        positive(self.amplitude_scale, "amplitude_scale")?;
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(invalid(format!("noise must be non-negative, got {}", self.noise)));
        }
        if !self.initial_phase.is_finite() {
            return Err(invalid("initial_phase must be finite"));
        }
        if self.frequency >= self.framerate / 2.0 {
            return Err(invalid(format!(
                "frequency {} Hz is above the Nyquist limit of {} fps",
                self.frequency, self.framerate
            )));
        }
        if self.frame_count() < 2 {
            return Err(invalid("duration · framerate must give at least 2 frames"));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.framerate + 1e-9).floor() as usize
    }

    /// Reads a spec from `key = value` lines (keys as the field names;
    /// `template` and `class` are required).
    pub fn from_config(cfg: &Config) -> Result<Self> {
        cfg.check_keys(
            "",
            &[
                "template", "class", "frequency", "amplitude_scale", "noise", "duration", "framerate",
                "initial_phase", "seed",
            ],
        )?;
        let template: Template = cfg.require("", "template")?.parse()?;
        let class: GaitClass = cfg.require("", "class")?.parse()?;
        let d = GaitSpec::new(template, class);
        let spec = GaitSpec {
            frequency: cfg.parse_or("", "frequency", d.frequency)?,
            amplitude_scale: cfg.parse_or("", "amplitude_scale", d.amplitude_scale)?,
            noise: cfg.parse_or("", "noise", d.noise)?,
            duration: cfg.parse_or("", "duration", d.duration)?,
            framerate: cfg.parse_or("", "framerate", d.framerate)?,
            initial_phase: cfg.parse_or("", "initial_phase", d.initial_phase)?,
            seed: cfg.parse_or("", "seed", d.seed)?,
            ..d
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Wraps a phase in cycles into `(-1/2, 1/2]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x - x.round();
    if r <= -0.5 {
        r + 1.0
    } else {
        r
    }
}

/// Per-frame ground truth of a generated sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub phase: Vec<f64>,
    pub frequency: Vec<f64>,
    pub class: Vec<GaitClass>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("GT v1 frames={}\n", self.len());
        for i in 0..self.len() {
            s.push_str(&format!("{} {} {}\n", self.phase[i], self.frequency[i], self.class[i]));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let perr = |line: usize, field: usize, message: String| Error::Parse {
            path: origin.clone(),
            line,
            field,
            message,
        };
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l).unwrap_or("");
        let frames: usize = header
            .strip_prefix("GT v1 frames=")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| perr(1, 1, "expected header `GT v1 frames=<n>`".into()))?;
        let mut gt = GroundTruth {
            phase: Vec::with_capacity(frames),
            frequency: Vec::with_capacity(frames),
            class: Vec::with_capacity(frames),
        };
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(perr(i + 1, toks.len(), "expected `phi f class`".into()));
            }
            let num = |k: usize| {
                toks[k]
                    .parse::<f64>()
                    .map_err(|_| perr(i + 1, k + 1, format!("`{}` is not a number", toks[k])))
            };
            gt.phase.push(num(0)?);
            gt.frequency.push(num(1)?);
            gt.class
                .push(toks[2].parse().map_err(|e: Error| perr(i + 1, 3, e.to_string()))?);
        }
        if gt.len() != frames {
            return Err(perr(1, 1, format!("header says {frames} frames, found {}", gt.len())));
        }
        Ok(gt)
    }
}

/// Generates one sequence and its ground truth.
pub fn generate(spec: &GaitSpec) -> Result<(MotionSequence, GroundTruth)> {
    spec.validate()?;
    let profile = spec.template.profile(spec.class);
    let joints = spec.template.joints(spec.class);
    let gain = profile.gain * spec.amplitude_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| invalid(e.to_string()))?;
    let name = format!("{}_{}", spec.template, spec.class);
    let mut seq = MotionSequence::new(name, spec.framerate, spec.template.joint_names())?;
    let n = spec.frame_count();
    let dt = 1.0 / spec.framerate;
    let root_height = match spec.template {
        Template::Biped => 1.0,
        Template::Quadruped => 0.6,
    };
    let mut gt = GroundTruth {
        phase: Vec::with_capacity(n),
        frequency: Vec::with_capacity(n),
        class: Vec::with_capacity(n),
    };
    let mut local = vec![0.0; 3 * joints.len()];
    for i in 0..n {
        let t = i as f64 * dt;
        let cycle = spec.frequency * t + spec.initial_phase;
        for (j, m) in joints.iter().enumerate() {
            for a in 0..3 {
                let wave = (TAU * (cycle + m.offset[a])).sin();
                let mut v = m.rest[a] + gain * m.amp[a] * wave;
                if spec.noise > 0.0 {
                    v += noise.sample(&mut rng);
                }
                local[3 * j + a] = v;
            }
        }
        seq.push_frame([0.0, root_height, profile.speed * t], [1.0, 0.0, 0.0, 0.0], &local)?;
        gt.phase.push(wrap_phase(cycle));
        gt.frequency.push(spec.frequency);
        gt.class.push(spec.class);
    }
    Ok((seq, gt))
}

/// A labelled multi-sequence dataset for one character.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub id: String,
    pub template: Template,
    pub sequences: Vec<MotionSequence>,
    pub truth: Vec<GroundTruth>,
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(|s| s.frame_count()).sum()
    }
}

/// Recipe for [`generate_dataset`].
#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub id: String,
    pub template: Template,
    pub classes: Vec<GaitClass>,
    pub sequences_per_class: usize,
    pub duration: f64,
    pub framerate: f64,
    pub noise: f64,
    /// Relative spread of per-sequence frequency and amplitude around the
    /// class nominal values, e.g. `0.05` for ±5 %.
    pub jitter: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(id: impl Into<String>, template: Template, seed: u64) -> Self {
        Self {
            id: id.into(),
            template,
            classes: GaitClass::ALL.to_vec(),
            sequences_per_class: 3,
            duration: 9.0,
            framerate: 60.0,
            noise: 0.0,
            jitter: 0.05,
            seed,
        }
    }
}

/// Generates `sequences_per_class` sequences per class with jittered
/// frequency, amplitude and starting phase, all derived from `seed`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sequences = Vec::new();
    let mut truth = Vec::new();
    for &class in &spec.classes {
        for k in 0..spec.sequences_per_class {
            let mut g = GaitSpec::new(spec.template, class);
            let spread = |rng: &mut ChaCha8Rng| 1.0 + spec.jitter * rng.random_range(-1.0..=1.0);
            g.frequency *= spread(&mut rng);
            g.amplitude_scale = spread(&mut rng);
            g.initial_phase = rng.random_range(0.0..1.0);
            g.noise = spec.noise;
            g.duration = spec.duration;
            g.framerate = spec.framerate;
            g.seed = rng.random();
            let (mut seq, gt) = generate(&g)?;
            seq.name = format!("{}_{}_{k}", spec.id, class);
            sequences.push(seq);
            truth.push(gt);
        }
    }
    Ok(Dataset {
        id: spec.id.clone(),
        template: spec.template,
        sequences,
        truth,
    })
}
