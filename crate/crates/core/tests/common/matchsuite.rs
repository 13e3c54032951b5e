//! Brute-force reference matchers and random databases for checking the
//! optimized search. Everything here recomputes periods, resampling and costs
//! from scratch with its own formulas.

use std::f64::consts::TAU;

use phase_manifold::manifold::{PhasePoint, PhaseTrack};
use phase_manifold::matching::{
    build_database, match_fixed, match_frequency_scaled, EmbeddingDatabase, MatchOutput, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2,
};
use phase_manifold::motion::{pose_descriptor, MotionSequence, PoseDescriptor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FPS: f64 = 60.0;
pub const DIM: usize = 4;
pub const JOINTS: usize = 3;

/// Random amplitude bank of `k` entries of width `2·DIM`.
pub fn amplitude_bank(rng: &mut impl Rng, k: usize) -> Vec<Vec<f64>> {
    (0..k).map(|_| (0..2 * DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn ellipse(a: &[f64], phase: f64) -> Vec<f64> {
    let d = a.len() / 2;
    (0..d).map(|i| a[i] * (TAU * phase).sin() + a[d + i] * (TAU * phase).cos()).collect()
}

/// Track with a slowly drifting frequency around `f0`, embedded on
/// amplitude `amp` with uniform noise of size `noise`.
pub fn random_track(rng: &mut impl Rng, frames: usize, f0: f64, amp: &[f64], amp_index: usize, noise: f64) -> PhaseTrack {
    let drift = rng.random_range(0.0..0.25);
    let slow = rng.random_range(0.05..0.3);
    let offset = rng.random_range(0.0..1.0);
    let mut phase = rng.random_range(-0.5..0.5);
    let mut points = Vec::with_capacity(frames);
    for i in 0..frames {
        let t = i as f64 / FPS;
        let f = f0 * (1.0 + drift * (TAU * (slow * t + offset)).sin());
        let embedding = ellipse(amp, phase)
            .into_iter()
            .map(|v| v + rng.random_range(-noise..=noise))
            .collect();
        points.push(PhasePoint {
            phase: phase - phase.round(),
            frequency: f,
            amplitude_index: amp_index,
            embedding,
        });
        phase += f / FPS;
    }
    PhaseTrack {
        dataset: "rand".into(),
        framerate: FPS,
        points,
    }
}

/// Motion whose joints swing with the track's phase plus jitter.
pub fn motion_for(rng: &mut impl Rng, name: &str, track: &PhaseTrack) -> MotionSequence {
    let names = (0..JOINTS).map(|j| format!("j{j}")).collect();
    let mut seq = MotionSequence::new(name, FPS, names).unwrap();
    let mut unwrapped = track.points[0].phase;
    let gains: Vec<f64> = (0..3 * JOINTS).map(|_| rng.random_range(0.05..0.4)).collect();
    for (i, p) in track.points.iter().enumerate() {
        if i > 0 {
            unwrapped += p.frequency / FPS;
        }
        let local: Vec<f64> = (0..3 * JOINTS)
            .map(|c| {
                let base = if c % 3 == 1 { 0.5 + 0.2 * (c / 3) as f64 } else { 0.1 * c as f64 };
                base + gains[c] * (TAU * unwrapped + c as f64).sin() + rng.random_range(-0.01..0.01)
            })
            .collect();
        seq.push_frame([0.0, 1.0, i as f64 * 0.02], [1.0, 0.0, 0.0, 0.0], &local).unwrap();
    }
    seq
}

pub struct RandomDb {
    pub db: EmbeddingDatabase,
    pub tracks: Vec<PhaseTrack>,
    pub seqs: Vec<MotionSequence>,
    pub bank: Vec<Vec<f64>>,
}

/// `sequences × frames` database over a four-entry amplitude bank.
pub fn random_database(seed: u64, sequences: usize, frames: usize) -> RandomDb {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank = amplitude_bank(&mut rng, 4);
    let mut tracks = Vec::new();
    let mut seqs = Vec::new();
    for s in 0..sequences {
        let k = s % bank.len();
        let f0 = rng.random_range(0.8..2.5);
        let track = random_track(&mut rng, frames, f0, &bank[k], k, 0.02);
        seqs.push(motion_for(&mut rng, &format!("seq{s}"), &track));
        tracks.push(track);
    }
    let rows: Vec<Vec<f64>> = bank.clone();
    let cb = phase_manifold::diff::Tensor2::from_rows(&rows).unwrap();
    let db = build_database(&tracks, &seqs, Some(&cb)).unwrap();
    RandomDb { db, tracks, seqs, bank }
}

/// Reference period via prefix sums.
pub fn oracle_period(freqs: &[f64], i: usize, dt: f64) -> Option<usize> {
    let mut prefix = vec![0.0];
    for f in freqs {
        prefix.push(prefix.last().unwrap() + f * dt);
    }
    (1..freqs.len().saturating_sub(i)).find(|&j| prefix[i + j + 1] - prefix[i] >= 1.0 - 1e-9)
}

/// Reference resampling with the `(1−w)a + wb` form.
pub fn oracle_resample(rows: &[Vec<f64>], samples: usize) -> Vec<Vec<f64>> {
    let len = rows.len();
    (0..samples)
        .map(|m| {
            if len == 1 {
                return rows[0].clone();
            }
            let pos = m as f64 / (samples - 1) as f64 * (len - 1) as f64;
            let lo = (pos as usize).min(len - 2);
            let w = pos - lo as f64;
            rows[lo].iter().zip(&rows[lo + 1]).map(|(a, b)| (1.0 - w) * a + w * b).collect()
        })
        .collect()
}

pub fn oracle_seq_distance(p: &[Vec<f64>], q: &[Vec<f64>], samples: usize) -> f64 {
    let (a, b) = (oracle_resample(p, samples), oracle_resample(q, samples));
    a.iter()
        .zip(&b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>())
        .sum()
}

fn rows(track_or_db: impl Fn(usize) -> Vec<f64>, start: usize, len: usize) -> Vec<Vec<f64>> {
    (start..start + len).map(track_or_db).collect()
}

fn desc_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn seq_bounds(db: &EmbeddingDatabase, frame: usize) -> (usize, usize) {
    let s = db.sequences().iter().find(|s| frame >= s.start && frame < s.start + s.len).unwrap();
    (s.start, s.start + s.len)
}

/// Exhaustive fixed-length matching; returns `(start, total cost)` per step.
pub fn brute_fixed(query: &PhaseTrack, db: &EmbeddingDatabase, t0: usize, lambda: f64, initial: &[f64]) -> Vec<(usize, f64)> {
    let mut j = initial.to_vec();
    let mut out = Vec::new();
    let mut i = 0;
    while i < query.len() {
        let m = t0.min(query.len() - i);
        let mut best = (usize::MAX, f64::INFINITY);
        for k in 0..db.len() {
            let (_, end) = seq_bounds(db, k);
            if k + t0 > end {
                continue;
            }
            let mut c = 0.0;
            for r in 0..m {
                c += desc_dist(&query.points[i + r].embedding, db.embedding(k + r));
            }
            c += lambda * desc_dist(&j, db.descriptor(k));
            if c < best.1 {
                best = (k, c);
            }
        }
        let (_, end) = seq_bounds(db, best.0);
        j = db.descriptor((best.0 + t0).min(end - 1)).to_vec();
        out.push(best);
        i += t0;
    }
    out
}

/// Exhaustive frequency-scaled matching; returns `(start, total cost)` per
/// step.
pub fn brute_frequency(
    query: &PhaseTrack,
    db: &EmbeddingDatabase,
    lambda1: f64,
    lambda2: f64,
    initial: &[f64],
) -> Vec<(usize, f64)> {
    let dt = 1.0 / db.framerate();
    let samples = db.framerate().round() as usize;
    let db_periods: Vec<Option<usize>> = (0..db.len())
        .map(|k| {
            let (start, end) = seq_bounds(db, k);
            oracle_period(&db.frequencies()[start..end], k - start, dt)
        })
        .collect();
    let qf: Vec<f64> = query.points.iter().map(|p| p.frequency).collect();
    let mut j = initial.to_vec();
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(ti) = oracle_period(&qf, i, dt) {
        let p = rows(|r| query.points[r].embedding.clone(), i, ti);
        let mut best = (usize::MAX, f64::INFINITY);
        for k in 0..db.len() {
            let Some(tk) = db_periods[k] else { continue };
            let q = rows(|r| db.embedding(r).to_vec(), k, tk);
            let c = oracle_seq_distance(&p, &q, samples)
                + lambda1 * desc_dist(&j, db.descriptor(k))
                + lambda2 * (ti as f64 - tk as f64).powi(2);
            if c < best.1 {
                best = (k, c);
            }
        }
        let tk = db_periods[best.0].unwrap();
        j = db.descriptor(best.0 + tk).to_vec();
        out.push(best);
        i += ti;
    }
    out
}

/// Number of steps whose chosen start differs from the reference, and the
/// largest relative cost discrepancy.
pub fn compare(output: &MatchOutput, reference: &[(usize, f64)]) -> (usize, f64) {
    let mut mismatches = output.steps.len().abs_diff(reference.len());
    let mut worst = 0.0f64;
    for (s, (k, c)) in output.steps.iter().zip(reference) {
        if s.db_start != *k {
            mismatches += 1;
        }
        worst = worst.max((s.cost.total - c).abs() / c.abs().max(1.0));
    }
    (mismatches, worst)
}

/// Random query: a noisy drifting track on a random bank amplitude.
pub fn random_query(rng: &mut impl Rng, bank: &[Vec<f64>]) -> PhaseTrack {
    let k = rng.random_range(0..bank.len());
    let frames = rng.random_range(150..400);
    let f0 = rng.random_range(0.8..2.5);
    random_track(rng, frames, f0, &bank[k], k, 0.05)
}

pub type Check = Result<String, String>;

/// Both matchers against the exhaustive references on 100 random queries
/// over a 4800-frame database.
pub fn brute_force_agreement() -> Check {
    let r = random_database(41, 8, 600);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut steps = 0;
    let mut worst = 0.0f64;
    for q in 0..100 {
        let query = random_query(&mut rng, &r.bank);
        let init = r.db.descriptor(rng.random_range(0..r.db.len())).to_vec();
        let initial = PoseDescriptor(init.clone());
        let lambda = [0.0, 0.5, 5.0][q % 3];
        let t0 = [10, 23, 40][q % 3];
        let fixed = match_fixed(&query, &r.db, t0, lambda, Some(&initial), 12).map_err(|e| e.to_string())?;
        let (mis, w) = compare(&fixed, &brute_fixed(&query, &r.db, t0, lambda, &init));
        if mis != 0 || w >= 1e-9 {
            return Err(format!("fixed matcher differs on query {q}: {mis} steps, cost gap {w:.1e}"));
        }
        worst = worst.max(w);
        steps += fixed.steps.len();
        let scaled =
            match_frequency_scaled(&query, &r.db, 0.5, 1.0, Some(&initial), 12).map_err(|e| e.to_string())?;
        let (mis, w) = compare(&scaled, &brute_frequency(&query, &r.db, 0.5, 1.0, &init));
        if mis != 0 || w >= 1e-9 {
            return Err(format!("scaled matcher differs on query {q}: {mis} steps, cost gap {w:.1e}"));
        }
        worst = worst.max(w);
        steps += scaled.steps.len();
    }
    Ok(format!("100 queries, {steps} steps, {} db frames, max cost gap {worst:.1e}", r.db.len()))
}

/// A database sequence queried with its own track costs exactly zero.
pub fn self_query_zero_cost() -> Check {
    let r = random_database(21, 1, 400);
    let initial = pose_descriptor(&r.seqs[0], 0).map_err(|e| e.to_string())?;
    let fixed = match_fixed(&r.tracks[0], &r.db, 20, 0.0, Some(&initial), 12).map_err(|e| e.to_string())?;
    let scaled = match_frequency_scaled(&r.tracks[0], &r.db, 0.5, 1.0, Some(&initial), 12).map_err(|e| e.to_string())?;
    let (a, b) = (fixed.total_cost(), scaled.total_cost());
    if a == 0.0 && b == 0.0 {
        Ok("fixed and scaled totals are 0".into())
    } else {
        Err(format!("self-query totals {a} (fixed) and {b} (scaled)"))
    }
}

/// Track at a constant frequency on amplitude `amp`.
pub fn steady_track(frames: usize, f: f64, amp: &[f64]) -> PhaseTrack {
    let points = (0..frames)
        .map(|i| {
            let phase = i as f64 * f / FPS;
            PhasePoint {
                phase: phase - phase.round(),
                frequency: f,
                amplitude_index: 0,
                embedding: ellipse(amp, phase),
            }
        })
        .collect();
    PhaseTrack {
        dataset: "steady".into(),
        framerate: FPS,
        points,
    }
}

/// Lag in `[lo, hi]` with the largest normalized autocorrelation, summed
/// over every local coordinate.
pub fn dominant_period(seq: &MotionSequence, lo: usize, hi: usize) -> usize {
    let n = seq.frame_count();
    let channels = seq.local_positions(0).len();
    let mut best = (lo, f64::NEG_INFINITY);
    for lag in lo..=hi.min(n - 1) {
        let mut score = 0.0;
        for c in 0..channels {
            let x: Vec<f64> = (0..n).map(|f| seq.local_positions(f)[c]).collect();
            let mean = x.iter().sum::<f64>() / n as f64;
            let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            if var <= 0.0 {
                continue;
            }
            let cov: f64 = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / (n - lag) as f64;
            score += cov / var;
        }
        if score > best.1 {
            best = (lag, score);
        }
    }
    best.0
}

/// A 2 Hz query against a database holding only a 1 Hz gait: every
/// segment spans exactly one query period and the replayed joints cycle
/// twice as fast as the database.
pub fn two_hertz_on_one_hertz() -> Check {
    let amp = [0.9, -0.4, 0.3, 0.7, 0.2, 0.8, -0.6, 0.1];
    let track = steady_track(600, 1.0, &amp);
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let seq = motion_for(&mut rng, "walk1hz", &track);
    let db = build_database(&[track], std::slice::from_ref(&seq), None).map_err(|e| e.to_string())?;
    let query = steady_track(600, 2.0, &amp);
    let out = match_frequency_scaled(&query, &db, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2, None, 12).map_err(|e| e.to_string())?;
    if out.steps.is_empty() {
        return Err("no segments emitted".into());
    }
    let freqs = query.frequencies();
    for s in &out.steps {
        let want = oracle_period(&freqs, s.query_start, 1.0 / FPS).ok_or("query period undefined")?;
        if s.query_len != want || s.output_len != want {
            return Err(format!(
                "step at {} spans {} query / {} output frames, period {want}",
                s.query_start, s.query_len, s.output_len
            ));
        }
    }
    let db_period = dominant_period(&seq, 10, 120) as f64;
    let out_period = dominant_period(&out.motion, 10, 120) as f64;
    let ratio = out_period / (db_period / 2.0);
    if (ratio - 1.0).abs() <= 0.1 {
        Ok(format!(
            "{} segments of {} frames; dominant period {out_period} vs database {db_period}",
            out.steps.len(),
            out.steps[0].output_len
        ))
    } else {
        Err(format!("dominant period {out_period} is not half of the database's {db_period}"))
    }
}
