mod common;

use std::f64::consts::TAU;
use std::path::Path;

use common::mathsuite;
use phase_manifold::manifold::*;
use phase_manifold::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn psi_closed_forms() {
    mathsuite::psi_identities().unwrap();
}

#[test]
fn cosine_and_sine_probes() {
    mathsuite::cos_sin_probes().unwrap();
}

#[test]
fn phase_shift_is_linear_in_the_signal_shift() {
    mathsuite::shift_equivariance().unwrap();
}

#[test]
fn embed_columns_are_psi_of_extrapolated_phase() {
    let a = [0.3, -1.0, 2.0, 0.5];
    let t = [-0.1, 0.0, 0.1, 0.2];
    let phases = extrapolate(0.2, 1.5, &t);
    let want: Vec<f64> = t.iter().map(|ti| 0.2 + 1.5 * ti).collect();
    assert_eq!(phases, want);
    let p = embed(&a, &phases);
    for (i, ph) in phases.iter().enumerate() {
        let want = [a[0] * (TAU * ph).sin() + a[2] * (TAU * ph).cos(), a[1] * (TAU * ph).sin() + a[3] * (TAU * ph).cos()];
        assert!((p.get(0, i) - want[0]).abs() < 1e-15 && (p.get(1, i) - want[1]).abs() < 1e-15);
        assert_eq!(p.column(i), psi(&a, *ph));
    }
}

#[test]
fn phase_range_and_degenerate_signal() {
    let t: Vec<f64> = (0..21).map(|i| (i as f64 - 10.0) / 60.0).collect();
    let est = phase_from_signal(&vec![0.0; 21], 2.0, &t).unwrap();
    assert!(est.degenerate && est.phase == 0.0);
    let (_, g) = phase_from_signal_with_grad(&vec![0.0; 21], 2.0, &t).unwrap();
    assert!(g.signal.iter().all(|v| *v == 0.0) && g.frequency == 0.0);
    let neg_cos: Vec<f64> = t.iter().map(|ti| -(TAU * 2.0 * ti).cos()).collect();
    assert_eq!(phase_from_signal(&neg_cos, 2.0, &t).unwrap().phase, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let y: Vec<f64> = t.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = phase_from_signal(&y, rng.random_range(0.0..10.0), &t).unwrap().phase;
        assert!(p > -0.5 && p <= 0.5);
    }
    assert!(phase_from_signal(&[1.0], 1.0, &[0.0]).is_err());
    assert!(phase_from_signal(&[1.0, 2.0], -1.0, &[0.0, 0.1]).is_err());
}

#[test]
fn untrained_heads() {
    let bins = [0.0, 1.0, 2.0, 3.0, 4.0];
    let zero = FrequencyHead::zeros("h", 5).unwrap();
    let f = frequency_from_powers(&[1.0, 0.2, 5.0, 0.1, 0.0], &bins, &zero).unwrap();
    assert!((f - 2.0).abs() < 1e-12, "uniform softmax gives the mean bin, got {f}");

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let head = FrequencyHead::new("h", 5, 25.0, &mut rng).unwrap();
    let f = frequency_from_powers(&[0.0, 0.0, 0.0, 1.0, 0.0], &bins, &head).unwrap();
    assert!((f - 3.0).abs() < 0.05, "{f}");
    // A large constant offset must not move the estimate.
    let g = frequency_from_powers(&[1e6, 0.0, 0.0, 1.0, 0.0], &bins, &head).unwrap();
    assert_eq!(f, g);
    assert!(frequency_from_powers(&[1.0; 4], &bins, &head).is_err());
}

#[test]
fn unwrap_restores_linear_phase() {
    let truth: Vec<f64> = (0..300).map(|i| -0.3 + 0.037 * i as f64).collect();
    let wrapped: Vec<f64> = truth.iter().map(|p| p - p.round()).collect();
    let un = unwrap_phase(&wrapped);
    for (u, t) in un.iter().zip(&truth) {
        assert!((u - t).abs() < 1e-12);
    }
}

fn sample_track() -> PhaseTrack {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    PhaseTrack {
        dataset: "biped".into(),
        framerate: 30.0,
        points: (0..40)
            .map(|i| PhasePoint {
                phase: rng.random_range(-0.5..0.5),
                frequency: 1.0 + i as f64 * 0.01,
                amplitude_index: i % 3,
                embedding: (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
            })
            .collect(),
    }
}

#[test]
fn track_binary_round_trip() {
    let track = sample_track();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.track");
    track.save(&path).unwrap();
    assert_eq!(PhaseTrack::load(&path).unwrap(), track);

    let bytes = track.to_bytes().unwrap();
    assert_eq!(&bytes[..7], b"PMTRACK");
    let origin = Path::new("t.track");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(PhaseTrack::from_bytes(&bad, origin), Err(Error::Format { .. })));
    let mut v2 = bytes.clone();
    v2[7] = 2;
    assert!(matches!(PhaseTrack::from_bytes(&v2, origin), Err(Error::Format { .. })));
    assert!(PhaseTrack::from_bytes(&bytes[..bytes.len() - 3], origin).is_err());
}

#[test]
fn track_text_export() {
    let track = sample_track();
    let text = track.to_text();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "frame time phi f amp p0 p1 p2 p3");
    assert_eq!(lines.len(), 41);
    let cols: Vec<f64> = lines[5].split_whitespace().map(|v| v.parse().unwrap()).collect();
    let p = &track.points[4];
    assert_eq!(cols[0], 4.0);
    assert!((cols[1] - 4.0 / 30.0).abs() < 1e-15);
    assert_eq!(&cols[2..5], &[p.phase, p.frequency, p.amplitude_index as f64]);
    assert_eq!(&cols[5..], p.embedding.as_slice());
}
