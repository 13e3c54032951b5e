//! The `pmm` command line: one subcommand per pipeline stage.
//!
//! Failures print a single line `error: <stage>: <message>` and exit with
//! status 1. Paths inside config files resolve against the config's own
//! directory.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codebook::purity;
use crate::config::Config;
use crate::diagnostics::{ablation_sweep, track_stats, PoseTrainConfig, StatsReport};
use crate::error::{invalid, Error, Result};
use crate::manifold::PhaseTrack;
use crate::matching::{
    build_database, default_blend_frames, match_fixed, match_frequency_scaled, retrieve_by_frequency,
    EmbeddingDatabase, MatchOutput, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2,
};
use crate::motion::{pose_descriptor, MotionSequence};
use crate::synth::{generate, generate_dataset, DatasetSpec, GaitClass, GaitSpec, GroundTruth, Template};
use crate::vqpae::{train_joint_with, SharedModel, TrainConfig, TrainingSet};

#[derive(Parser, Debug)]
#[command(name = "pmm", version, about = "Phase manifolds and frequency-scaled motion matching")]
pub struct Cli {
    /// Worker threads; 1 gives bit-exact reproducibility.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic motion with ground truth.
    Gen(GenArgs),
    /// Train one or more VQ-PAEs with a shared codebook.
    Train(TrainArgs),
    /// Embed a motion into a phase track.
    Embed(EmbedArgs),
    /// Build a matching database from motions.
    BuildDb(BuildDbArgs),
    /// Replay database poses along a query track.
    Match(MatchArgs),
    /// Retrieve one cycle for a codebook amplitude and frequency.
    Retrieve(RetrieveArgs),
    /// Report per-track statistics or run a codebook ablation.
    Stats(StatsArgs),
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Embed(_) => "embed",
            Command::BuildDb(_) => "build-db",
            Command::Match(_) => "match",
            Command::Retrieve(_) => "retrieve",
            Command::Stats(_) => "stats",
        }
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Gait spec (top-level keys) or dataset spec (`[dataset]` section).
    #[arg(long)]
    pub spec: PathBuf,
    /// Motion file, or output directory for a dataset spec.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth sidecar; defaults to the motion path with `.gt`.
    #[arg(long)]
    pub gt: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint path; overrides `[output] checkpoint`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional CSV loss curve.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub motion: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset id; needed only when several models fit the motion.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Also write the plain-text export.
    #[arg(long)]
    pub text: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildDbArgs {
    /// Checkpoint used to embed the motions and to supply the codebook.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "motion", required = true)]
    pub motions: Vec<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Fixed,
    Freq,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long, value_enum, default_value = "freq")]
    pub mode: Mode,
    /// Segment length of fixed mode, in frames.
    #[arg(long, default_value_t = 30)]
    pub t0: usize,
    /// Descriptor weight (also the single weight of fixed mode).
    #[arg(long, default_value_t = DEFAULT_LAMBDA1)]
    pub lambda1: f64,
    /// Period-difference weight of frequency-scaled mode.
    #[arg(long, default_value_t = DEFAULT_LAMBDA2)]
    pub lambda2: f64,
    /// Blend length in frames; defaults to a fifth of a second.
    #[arg(long)]
    pub blend: Option<usize>,
    /// Motion whose first frame gives the starting pose descriptor.
    #[arg(long)]
    pub query_motion: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub amp: usize,
    #[arg(long)]
    pub freq: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Data config (`[data.<id>]` sections) and, for `--ablation`, the
    /// `[train]` and `[ablation]` sections.
    #[arg(long)]
    pub config: PathBuf,
    /// Trained checkpoint to report on; not used with `--ablation`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub ablation: bool,
    /// Plain-text report; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stage = cli.command.stage();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {stage}: {msg}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(invalid("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?
        .install(|| match cli.command {
            Command::Gen(a) => gen(a),
            Command::Train(a) => train(a),
            Command::Embed(a) => embed(a),
            Command::BuildDb(a) => build_db(a),
            Command::Match(a) => run_match(a),
            Command::Retrieve(a) => retrieve(a),
            Command::Stats(a) => stats(a),
        })
}

/// Prefixes I/O failures with the path they concern.
fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => invalid(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let cfg = at(&a.spec, Config::load(&a.spec))?;
    if cfg.has_section("dataset") {
        return gen_dataset(&cfg, &a.out);
    }
    let spec = GaitSpec::from_config(&cfg)?;
    let (mut seq, gt) = generate(&spec)?;
    seq.name = a
        .out
        .file_stem()
        .map_or_else(|| "motion".to_string(), |s| s.to_string_lossy().into_owned());
    seq.save(&a.out)?;
    gt.save(a.gt.unwrap_or_else(|| a.out.with_extension("gt")))?;
    Ok(())
}

fn gen_dataset(cfg: &Config, out: &Path) -> Result<()> {
    const S: &str = "dataset";
    cfg.check_keys(
        S,
        &["id", "template", "classes", "sequences_per_class", "duration", "framerate", "noise", "jitter", "seed"],
    )?;
    let template: Template = cfg.parse_required(S, "template")?;
    let id = cfg.get(S, "id").map_or_else(|| template.to_string(), str::to_string);
    let d = DatasetSpec::new(id, template, cfg.parse_or(S, "seed", 0)?);
    let spec = DatasetSpec {
        classes: cfg.list_or::<GaitClass>(S, "classes", d.classes.clone())?,
        sequences_per_class: cfg.parse_or(S, "sequences_per_class", d.sequences_per_class)?,
        duration: cfg.parse_or(S, "duration", d.duration)?,
        framerate: cfg.parse_or(S, "framerate", d.framerate)?,
        noise: cfg.parse_or(S, "noise", d.noise)?,
        jitter: cfg.parse_or(S, "jitter", d.jitter)?,
        ..d
    };
    let data = generate_dataset(&spec)?;
    std::fs::create_dir_all(out)?;
    for (seq, gt) in data.sequences.iter().zip(&data.truth) {
        seq.save(out.join(format!("{}.motion", seq.name)))?;
        gt.save(out.join(format!("{}.gt", seq.name)))?;
    }
    Ok(())
}

/// One `[data.<id>]` section: motion files and optional ground truth.
struct DataSection {
    id: String,
    motions: Vec<PathBuf>,
    truth: Vec<PathBuf>,
}

fn data_sections(cfg: &Config, base: &Path) -> Result<Vec<DataSection>> {
    let mut out = Vec::new();
    for name in cfg.section_names() {
        let Some(id) = name.strip_prefix("data.") else { continue };
        cfg.check_keys(name, &["motions", "dir", "truth"])?;
        let mut motions: Vec<PathBuf> = cfg
            .list_or::<String>(name, "motions", Vec::new())?
            .iter()
            .map(|p| resolve(base, p))
            .collect();
        let mut truth: Vec<PathBuf> = cfg
            .list_or::<String>(name, "truth", Vec::new())?
            .iter()
            .map(|p| resolve(base, p))
            .collect();
        if let Some(dir) = cfg.get(name, "dir") {
            let dir = resolve(base, dir);
            let mut found: Vec<PathBuf> = at(&dir, std::fs::read_dir(&dir).map_err(Error::from))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "motion"))
                .collect();
            found.sort();
            if truth.is_empty() && found.iter().all(|p| p.with_extension("gt").exists()) {
                truth = found.iter().map(|p| p.with_extension("gt")).collect();
            }
            motions.extend(found);
        }
        if motions.is_empty() {
            return Err(invalid(format!("section [{name}] lists no motions")));
        }
        if !truth.is_empty() && truth.len() != motions.len() {
            return Err(invalid(format!("section [{name}] has {} motions but {} truth files", motions.len(), truth.len())));
        }
        out.push(DataSection {
            id: id.to_string(),
            motions,
            truth,
        });
    }
    if out.is_empty() {
        return Err(invalid(format!("{}: no [data.<id>] sections", cfg.origin())));
    }
    Ok(out)
}

fn training_sets(sections: &[DataSection]) -> Result<Vec<TrainingSet>> {
    sections
        .iter()
        .map(|s| {
            Ok(TrainingSet {
                id: s.id.clone(),
                sequences: s.motions.iter().map(|p| at(p, MotionSequence::load(p))).collect::<Result<_>>()?,
            })
        })
        .collect()
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = at(&a.config, Config::load(&a.config))?;
    let base = base_dir(&a.config);
    let tc = TrainConfig::from_config(&cfg, "train")?;
    cfg.check_keys("output", &["checkpoint"])?;
    let out = match (a.out, cfg.get("output", "checkpoint")) {
        (Some(p), _) => p,
        (None, Some(p)) => resolve(&base, p),
        (None, None) => return Err(invalid("no checkpoint path: pass --out or set [output] checkpoint")),
    };
    let sets = training_sets(&data_sections(&cfg, &base)?)?;
    let (model, report) = train_joint_with(&sets, &tc, &mut |_, _| {})?;
    model.save(&out)?;
    if let Some(log) = a.log {
        let mut s = String::from("step,loss");
        for set in &sets {
            let _ = write!(s, ",rec_{}", set.id);
        }
        s.push('\n');
        for (i, l) in report.loss.iter().enumerate() {
            let _ = write!(s, "{i},{l}");
            for r in &report.rec {
                let _ = write!(s, ",{}", r[i]);
            }
            s.push('\n');
        }
        std::fs::write(log, s)?;
    }
    Ok(())
}

fn embed_with(model: &SharedModel, seq: &MotionSequence, id: Option<&str>) -> Result<PhaseTrack> {
    let m = model.model_for(seq, id)?;
    model.embed_sequence(&m.id, seq)
}

fn embed(a: EmbedArgs) -> Result<()> {
    let model = at(&a.checkpoint, SharedModel::load(&a.checkpoint))?;
    let seq = at(&a.motion, MotionSequence::load(&a.motion))?;
    let track = embed_with(&model, &seq, a.dataset.as_deref())?;
    track.save(&a.out)?;
    if let Some(t) = a.text {
        std::fs::write(t, track.to_text())?;
    }
    Ok(())
}

fn build_db(a: BuildDbArgs) -> Result<()> {
    let model = at(&a.checkpoint, SharedModel::load(&a.checkpoint))?;
    let seqs: Vec<MotionSequence> = a.motions.iter().map(|p| at(p, MotionSequence::load(p))).collect::<Result<_>>()?;
    let tracks: Vec<PhaseTrack> = seqs
        .iter()
        .map(|s| embed_with(&model, s, a.dataset.as_deref()))
        .collect::<Result<_>>()?;
    let db = build_database(&tracks, &seqs, Some(&model.codebook.entries.value))?;
    db.save(&a.out)
}

fn run_match(a: MatchArgs) -> Result<()> {
    let db = at(&a.db, EmbeddingDatabase::load(&a.db))?;
    let query = at(&a.query, PhaseTrack::load(&a.query))?;
    let initial = match &a.query_motion {
        Some(p) => {
            let seq = at(p, MotionSequence::load(p))?;
            Some(pose_descriptor(&seq, 0)?)
        }
        None => None,
    };
    let blend = a.blend.unwrap_or_else(|| default_blend_frames(db.framerate()));
    let out = match a.mode {
        Mode::Fixed => match_fixed(&query, &db, a.t0, a.lambda1, initial.as_ref(), blend)?,
        Mode::Freq => match_frequency_scaled(&query, &db, a.lambda1, a.lambda2, initial.as_ref(), blend)?,
    };
    out.motion.save(&a.out)?;
    print!("{}", match_summary(&out));
    if let Some(t) = &out.truncated {
        eprintln!("note: {t}");
    }
    Ok(())
}

fn match_summary(out: &MatchOutput) -> String {
    let mut s = String::from("step query_start query_len db_start db_len cost transition\n");
    for (i, m) in out.steps.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i} {} {} {} {} {:.6} {:?}",
            m.query_start, m.query_len, m.db_start, m.db_len, m.cost.total, m.transition
        );
    }
    let _ = writeln!(
        s,
        "total {:.6} frames {} start_descriptor {:?}",
        out.total_cost(),
        out.motion.frame_count(),
        out.descriptor_source
    );
    s
}

fn retrieve(a: RetrieveArgs) -> Result<()> {
    let db = at(&a.db, EmbeddingDatabase::load(&a.db))?;
    let r = retrieve_by_frequency(&db, a.amp, a.freq)?;
    println!("sequence {} start {} len {} cost {:.6}", r.sequence, r.start, r.len, r.cost);
    if let Some(p) = a.out {
        r.motion.save(p)?;
    }
    Ok(())
}

fn write_report(text: &str, csv: &str, out: Option<&Path>, csv_path: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    if let Some(p) = csv_path {
        std::fs::write(p, csv)?;
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let cfg = at(&a.config, Config::load(&a.config))?;
    let base = base_dir(&a.config);
    let sections = data_sections(&cfg, &base)?;
    if a.ablation {
        let tc = TrainConfig::from_config(&cfg, "train")?;
        cfg.check_keys("ablation", &["sizes", "reinit", "pose_steps", "pose_lr", "pose_batch"])?;
        let sizes: Vec<usize> = cfg.list_or("ablation", "sizes", vec![2, 4, 8, 16])?;
        let reinit: Vec<bool> = cfg.list_or("ablation", "reinit", vec![true, false])?;
        let d = PoseTrainConfig::default();
        let pose = PoseTrainConfig {
            steps: cfg.parse_or("ablation", "pose_steps", d.steps)?,
            lr: cfg.parse_or("ablation", "pose_lr", d.lr)?,
            batch: cfg.parse_or("ablation", "pose_batch", d.batch)?,
            seed: tc.seed,
        };
        let report = ablation_sweep(&sizes, &reinit, &training_sets(&sections)?, &tc, &pose)?;
        return write_report(&report.to_text(), &report.to_csv(), a.out.as_deref(), a.csv.as_deref());
    }
    let ckpt = a
        .checkpoint
        .as_ref()
        .ok_or_else(|| invalid("pass --checkpoint, or --ablation to train a sweep"))?;
    let model = at(ckpt, SharedModel::load(ckpt))?;
    let k = model.codebook.size();
    let mut rows = Vec::new();
    let (mut indices, mut labels) = (Vec::new(), Vec::new());
    let mut labelled = true;
    for s in &sections {
        for (i, path) in s.motions.iter().enumerate() {
            let seq = at(path, MotionSequence::load(path))?;
            let track = model.embed_sequence(&s.id, &seq)?;
            let truth = s.truth.get(i).map(|p| at(p, GroundTruth::load(p))).transpose()?;
            if let Some(gt) = &truth {
                if gt.len() != track.len() {
                    return Err(invalid(format!("{}: truth has {} frames, motion {}", path.display(), gt.len(), track.len())));
                }
                labels.extend(gt.class.iter().map(|c| c.index()));
            } else {
                labelled = false;
            }
            indices.extend(track.amplitude_indices());
            let mut st = track_stats(&seq.name, &track, k, truth.as_ref().map(|g| g.frequency.as_slice()))?;
            st.dataset = s.id.clone();
            rows.push(st);
        }
    }
    let p = if labelled { Some(purity(&indices, &labels)?) } else { None };
    let report = StatsReport::new(rows, p)?;
    write_report(&report.to_text(), &report.to_csv(), a.out.as_deref(), a.csv.as_deref())
}
