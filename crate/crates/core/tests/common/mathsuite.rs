//! Checks on the phase manifold and the codebook against closed forms and
//! sampling statistics. Each check returns a one-line summary or the reason
//! it failed.

use std::f64::consts::TAU;

use phase_manifold::codebook::Codebook;
use phase_manifold::diff::Tensor2;
use phase_manifold::manifold::{phase_from_signal, psi};
use phase_manifold::motion::relative_timing;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Ψ(A, φ + n) = Ψ(A, φ), Ψ(A, 0) = A¹ and Ψ(A, 1/4) = A⁰ for random A.
pub fn psi_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(1..9);
        let a: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (a0, a1) = a.split_at(d);
        let phi = rng.random_range(-0.5..0.5);
        let n = rng.random_range(-3..=3) as f64;
        worst = worst.max(max_abs_diff(&psi(&a, phi + n), &psi(&a, phi)));
        worst = worst.max(max_abs_diff(&psi(&a, 0.0), a1));
        worst = worst.max(max_abs_diff(&psi(&a, 0.25), a0));
    }
    if worst <= 1e-12 {
        Ok(format!("max deviation {worst:.2e}"))
    } else {
        Err(format!("max deviation {worst:.2e} > 1e-12"))
    }
}

/// A pure cosine reads as phase 0 and a pure sine as phase 1/4.
pub fn cos_sin_probes() -> Check {
    let mut worst: f64 = 0.0;
    for len in [31, 61, 121] {
        for f in [0.5, 1.0, 1.7, 2.5, 4.0] {
            let t = relative_timing(len, 1.0 / 60.0);
            let cos: Vec<f64> = t.iter().map(|ti| (TAU * f * ti).cos()).collect();
            let sin: Vec<f64> = t.iter().map(|ti| (TAU * f * ti).sin()).collect();
            let pc = phase_from_signal(&cos, f, &t).map_err(|e| e.to_string())?.phase;
            let ps = phase_from_signal(&sin, f, &t).map_err(|e| e.to_string())?.phase;
            worst = worst.max(pc.abs()).max((ps - 0.25).abs());
        }
    }
    if worst <= 1e-6 {
        Ok(format!("max deviation {worst:.2e}"))
    } else {
        Err(format!("max deviation {worst:.2e} > 1e-6"))
    }
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy * sxy / (sxx * syy)
}

fn unwrap(p: &[f64]) -> Vec<f64> {
    let mut out = vec![p[0]];
    for w in p.windows(2) {
        let step = w[1] - w[0];
        out.push(out.last().unwrap() + step - step.round());
    }
    out
}

/// Shifting a sinusoid by `c` cycles shifts the extracted phase linearly.
/// Returns the worst R² over a sweep of frequencies and window lengths.
pub fn shift_equivariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 1.0;
    for len in [31, 61, 121] {
        for _ in 0..10 {
            let f = rng.random_range(0.5..5.0);
            let amp = rng.random_range(0.2..3.0);
            let t = relative_timing(len, 1.0 / 60.0);
            let shifts: Vec<f64> = (0..100).map(|k| k as f64 / 100.0).collect();
            let mut phases = Vec::new();
            for &c in &shifts {
                let y: Vec<f64> = t.iter().map(|ti| amp * (TAU * (f * ti + c)).cos()).collect();
                phases.push(phase_from_signal(&y, f, &t).map_err(|e| e.to_string())?.phase);
            }
            worst = worst.min(r_squared(&shifts, &unwrap(&phases)));
        }
    }
    if worst >= 0.99 {
        Ok(format!("min R^2 {worst:.5}"))
    } else {
        Err(format!("min R^2 {worst:.5} < 0.99"))
    }
}

/// `quantize` against a direct scan over every entry on 10⁴ queries.
pub fn quantize_matches_scan() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    let mut total = 0;
    for (k, w) in [(1, 2), (4, 8), (16, 8), (64, 16)] {
        let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..w).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let cb = Codebook::from_entries(Tensor2::from_rows(&rows).unwrap(), 0).unwrap();
        for _ in 0..2500 {
            let q: Vec<f64> = (0..w).map(|_| rng.random_range(-1.5..1.5)).collect();
            let dist = |r: &Vec<f64>| r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let mut best = 0;
            for i in 1..k {
                if dist(&rows[i]) < dist(&rows[best]) {
                    best = i;
                }
            }
            let got = cb.quantize(&q);
            if got.index != best || got.quantized != rows[best] {
                mismatches += 1;
            }
            total += 1;
        }
    }
    if mismatches == 0 {
        Ok(format!("{total} queries agree"))
    } else {
        Err(format!("{mismatches} of {total} queries disagree"))
    }
}

/// Usage decay `N ← γN + (1−γ)n/ΣN` recomputed by hand over random
/// histories, compared for exact equality.
pub fn usage_arithmetic() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cb = Codebook::new(6, 2, 0).unwrap();
    cb.decay = 0.9;
    cb.attach("x");
    cb.attach("y");
    let mut expect = [vec![0.0f64; 6], vec![0.0f64; 6]];
    for step in 0..500 {
        for (slot, id) in ["x", "y"].iter().enumerate() {
            let counts: Vec<usize> = (0..6).map(|_| if rng.random_bool(0.4) { rng.random_range(0..40) } else { 0 }).collect();
            let n: usize = counts.iter().sum();
            if n == 0 {
                continue;
            }
            cb.record_usage(id, &counts).unwrap();
            for (e, c) in expect[slot].iter_mut().zip(&counts) {
                *e = 0.9 * *e + (1.0 - 0.9) * *c as f64 / n as f64;
            }
            if cb.usage(id).unwrap() != expect[slot].as_slice() {
                return Err(format!("encoder {id} differs at step {step}"));
            }
        }
    }
    Ok("500 steps on two encoders agree exactly".into())
}

/// α is 1·e^{−ε} for an unused entry and never increases with usage.
pub fn alpha_monotone() -> Check {
    let cb = Codebook::new(2, 1, 0).unwrap();
    if cb.alpha(0.0) != (-cb.epsilon).exp() {
        return Err(format!("alpha(0) = {}", cb.alpha(0.0)));
    }
    let mut prev = cb.alpha(0.0);
    for k in 1..=100_000 {
        let a = cb.alpha(k as f64 * 1e-5);
        if a > prev || !(0.0..=1.0).contains(&a) {
            return Err(format!("alpha increases at usage {}", k as f64 * 1e-5));
        }
        prev = a;
    }
    Ok(format!("non-increasing on [0, 1], alpha(1) = {prev:.1e}"))
}

/// Draw frequencies of the reinitialization target against the
/// `exp(−distance)` weights computed here, over 10⁵ draws.
pub fn reinit_sampling() -> Check {
    let entry = vec![0.0, 0.0];
    // Distances 0.5, 1.0, 1.5 and 1.9 from the entry.
    let batch: Vec<Vec<f64>> = vec![vec![0.5, 0.0], vec![0.0, -1.0], vec![-1.5, 0.0], vec![0.0, 1.9]];
    let raw: Vec<f64> = batch.iter().map(|z| (-(z[0] * z[0] + z[1] * z[1]).sqrt()).exp()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mut cb = Codebook::from_entries(Tensor2::from_rows(&[entry.clone()]).unwrap(), 17).unwrap();
    cb.attach("e");
    let alpha = cb.alpha(0.0);
    let draws = 100_000;
    let mut counts = vec![0usize; batch.len()];
    for _ in 0..draws {
        let prop = cb.reinit_step("e", &batch).map_err(|e| e.to_string())?;
        let target: Vec<f64> = prop[0].iter().zip(&entry).map(|(p, a)| (p - (1.0 - alpha) * a) / alpha).collect();
        let pick = (0..batch.len())
            .min_by(|&i, &j| {
                let d = |k: usize| batch[k].iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                d(i).total_cmp(&d(j))
            })
            .unwrap();
        counts[pick] += 1;
    }
    let mut worst: f64 = 0.0;
    for (c, w) in counts.iter().zip(&weights) {
        worst = worst.max((*c as f64 / draws as f64 - w).abs() / w);
    }
    if worst <= 0.02 {
        Ok(format!("max relative deviation {:.2}%", 100.0 * worst))
    } else {
        Err(format!("max relative deviation {:.2}% > 2%", 100.0 * worst))
    }
}
