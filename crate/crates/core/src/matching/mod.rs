//! Embedding database and the two matching loops that replay database poses
//! along a query embedding track.
//!
//! Window conventions used throughout: a window `k..k + t` holds `t` frames
//! (exclusive end) and frame `k + t` is its continuation, the pose the
//! database would have shown next. A frame is a candidate only when its
//! continuation exists inside the same sequence.

mod database;
mod search;

pub use database::{build_database, EmbeddingDatabase, SequenceRange, DATABASE_VERSION};
pub use search::{
    match_fixed, match_frequency_scaled, retrieve_by_frequency, retrieve_with_amplitude, CostBreakdown,
    DescriptorSource, MatchOutput, MatchResult, Retrieval, Transition,
};

/// Slack on the cumulative-phase test so that sums like `60 × (1/60)` that
/// land a rounding error below one still close the period.
pub const PERIOD_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_LAMBDA1: f64 = 0.5;
pub const DEFAULT_LAMBDA2: f64 = 1.0;

/// Blend length used when none is configured: a fifth of a second.
pub fn default_blend_frames(framerate: f64) -> usize {
    (0.2 * framerate).round() as usize
}

/// Number of samples both windows are resampled to before comparison.
pub fn comparison_samples(framerate: f64) -> usize {
    framerate.round().max(1.0) as usize
}

/// Smallest `j ≥ 1` with `Σ_{m=i}^{i+j} f_m dt ≥ 1`, or `None` when the sum
/// runs past the end of `frequencies` first.
pub fn period(frequencies: &[f64], i: usize, dt: f64) -> Option<usize> {
    let mut acc = *frequencies.get(i)? * dt;
    for j in 1.. {
        let f = frequencies.get(i + j)?;
        acc += f * dt;
        if acc >= 1.0 - PERIOD_TOLERANCE {
            return Some(j);
        }
    }
    unreachable!()
}

/// Periods of every frame of one sequence.
pub fn periods(frequencies: &[f64], dt: f64) -> Vec<Option<usize>> {
    (0..frequencies.len()).map(|i| period(frequencies, i, dt)).collect()
}

/// Linearly resamples a row-major `len × dim` window to `samples` rows whose
/// first and last rows coincide with the window's.
pub fn resample(window: &[f64], dim: usize, samples: usize) -> Vec<f64> {
    let len = window.len() / dim.max(1);
    let mut out = vec![0.0; samples * dim];
    if len == 0 {
        return out;
    }
    for m in 0..samples {
        let dst = &mut out[m * dim..(m + 1) * dim];
        if len == 1 || samples == 1 {
            dst.copy_from_slice(&window[..dim]);
            continue;
        }
        let u = m as f64 * (len - 1) as f64 / (samples - 1) as f64;
        let i0 = (u.floor() as usize).min(len - 2);
        let frac = u - i0 as f64;
        let a = &window[i0 * dim..(i0 + 1) * dim];
        let b = &window[(i0 + 1) * dim..(i0 + 2) * dim];
        for c in 0..dim {
            dst[c] = a[c] + (b[c] - a[c]) * frac;
        }
    }
    out
}

/// Sum of squared differences after resampling both windows to `samples`
/// rows.
pub fn seq_distance(p: &[f64], q: &[f64], dim: usize, samples: usize) -> f64 {
    squared_distance(&resample(p, dim, samples), &resample(q, dim, samples))
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cubic decay `(1−s)²(1+2s)` of the transition offset.
pub fn blend_weight(frame: usize, blend_frames: usize) -> f64 {
    if frame >= blend_frames {
        return 0.0;
    }
    let s = frame as f64 / blend_frames as f64;
    (1.0 - s) * (1.0 - s) * (1.0 + 2.0 * s)
}

/// Adds the offset `prev_tail − segment[0]`, decayed over `blend_frames`, to
/// every frame of `segment`.
pub fn inertialize(prev_tail: &[f64], segment: &[Vec<f64>], blend_frames: usize) -> Vec<Vec<f64>> {
    let Some(first) = segment.first() else {
        return Vec::new();
    };
    let offset: Vec<f64> = prev_tail.iter().zip(first).map(|(p, s)| p - s).collect();
    segment
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            let w = blend_weight(i, blend_frames);
            if w == 1.0 {
                return prev_tail.to_vec();
            }
            frame.iter().zip(&offset).map(|(v, o)| v + w * o).collect()
        })
        .collect()
}
