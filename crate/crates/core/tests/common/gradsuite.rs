//! Finite-difference checks for every differentiable operation and for the
//! composed autoencoder with frozen codebook indices.

use std::f64::consts::TAU;

use phase_manifold::codebook::{vq_loss, vq_loss_squared, Codebook, VqNorm};
use phase_manifold::diff::gradcheck::{compare, numeric_gradient, DEFAULT_STEP};
use phase_manifold::diff::ops::l2_distance_with_grad;
use phase_manifold::diff::{
    avg_pool_time, avg_pool_time_backward, Activation, Conv1d, GradCheckReport, Mlp, Module, PowerSpectrum,
    Tensor2,
};
use phase_manifold::manifold::{embed, embed_backward, phase_from_signal_with_grad, FrequencyHead};
use phase_manifold::motion::relative_timing;
use phase_manifold::vqpae::{LossWeights, ModelConfig, VqPae};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{assign_model_values, assign_values, dot, flatten_grads, flatten_values, model_values, random_tensor, random_vec};

pub const RTOL: f64 = 1e-3;
pub const PROBES: u64 = 10;

fn check(label: &str, x: &[f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> GradCheckReport {
    let numeric = numeric_gradient(x, &mut loss, DEFAULT_STEP);
    compare(label, analytic, &numeric, RTOL)
}

fn conv_probe(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cin, cout, k, t, b) = (3, 2, 5, 7, 2);
    let conv = Conv1d::new("c", cin, cout, k, &mut rng).unwrap();
    let x = random_tensor(&mut rng, cin, b * t, 1.0);
    let r = random_vec(&mut rng, cout * b * t, 1.0);
    let mut c = conv.clone();
    let (_, cache) = c.forward(&x, t).unwrap();
    let gx = c.backward(&cache, &Tensor2::from_vec(cout, b * t, r.clone()).unwrap(), true).unwrap();
    let mut point = x.data().to_vec();
    point.extend(flatten_values(&conv));
    let mut analytic = gx.into_vec();
    analytic.extend(flatten_grads(&c));
    let nx = x.data().len();
    check("conv1d", &point, &analytic, |v| {
        let mut m = conv.clone();
        assign_values(&mut m, &v[nx..]);
        let xi = Tensor2::from_vec(cin, b * t, v[..nx].to_vec()).unwrap();
        dot(m.forward(&xi, t).unwrap().0.data(), &r)
    })
}

fn mlp_probe(seed: u64, act: Activation, label: &str) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mlp = Mlp::new("m", &[4, 6, 5, 3], act, &mut rng).unwrap();
    let x = random_tensor(&mut rng, 4, 3, 1.0);
    let r = random_vec(&mut rng, 9, 1.0);
    let mut m = mlp.clone();
    let (_, cache) = m.forward(&x).unwrap();
    let gx = m.backward(&cache, &Tensor2::from_vec(3, 3, r.clone()).unwrap());
    let mut point = x.data().to_vec();
    point.extend(flatten_values(&mlp));
    let mut analytic = gx.into_vec();
    analytic.extend(flatten_grads(&m));
    check(label, &point, &analytic, |v| {
        let mut mm = mlp.clone();
        assign_values(&mut mm, &v[12..]);
        let xi = Tensor2::from_vec(4, 3, v[..12].to_vec()).unwrap();
        dot(mm.predict(&xi).unwrap().data(), &r)
    })
}

fn pool_probe(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, b, t) = (3, 2, 5);
    let x = random_tensor(&mut rng, c, b * t, 1.0);
    let r = random_vec(&mut rng, c * b, 1.0);
    let g = avg_pool_time_backward(&Tensor2::from_vec(c, b, r.clone()).unwrap(), t);
    check("avg_pool_time", x.data(), g.data(), |v| {
        let xi = Tensor2::from_vec(c, b * t, v.to_vec()).unwrap();
        dot(avg_pool_time(&xi, t).unwrap().data(), &r)
    })
}

fn composition_probe(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cin, ch, t, b) = (2, 3, 9, 2);
    let conv = Conv1d::new("c", cin, ch, 5, &mut rng).unwrap();
    let mlp = Mlp::new("m", &[ch, 4, 2], Activation::Elu, &mut rng).unwrap();
    let x = random_tensor(&mut rng, cin, b * t, 1.0);
    let r = random_vec(&mut rng, 2 * b, 1.0);
    let run = |c: &Conv1d, m: &Mlp, x: &Tensor2| {
        let (pre, cc) = c.forward(x, t).unwrap();
        let h = Activation::Elu.forward(&pre);
        let pooled = avg_pool_time(&h, t).unwrap();
        let (out, mc) = m.forward(&pooled).unwrap();
        (out, cc, pre, mc)
    };
    let (mut c, mut m) = (conv.clone(), mlp.clone());
    let (_, cc, pre, mc) = run(&c, &m, &x);
    let gp = m.backward(&mc, &Tensor2::from_vec(2, b, r.clone()).unwrap());
    let mut gh = avg_pool_time_backward(&gp, t);
    Activation::Elu.backward_in_place(&pre, &mut gh);
    let gx = c.backward(&cc, &gh, true).unwrap();
    let mut point = x.data().to_vec();
    point.extend(flatten_values(&conv));
    point.extend(flatten_values(&mlp));
    let mut analytic = gx.into_vec();
    analytic.extend(flatten_grads(&c));
    analytic.extend(flatten_grads(&m));
    let (nx, nc) = (x.data().len(), conv.param_count());
    check("conv→pool→mlp", &point, &analytic, |v| {
        let (mut c2, mut m2) = (conv.clone(), mlp.clone());
        assign_values(&mut c2, &v[nx..nx + nc]);
        assign_values(&mut m2, &v[nx + nc..]);
        let xi = Tensor2::from_vec(cin, b * t, v[..nx].to_vec()).unwrap();
        dot(run(&c2, &m2, &xi).0.data(), &r)
    })
}

fn fft_probe(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = 9 + (seed % 2) as usize;
    let sp = PowerSpectrum::new(t).unwrap();
    let x = random_vec(&mut rng, t, 1.0);
    let r = random_vec(&mut rng, sp.bins(), 1.0);
    let (_, cache) = sp.forward(&x).unwrap();
    let g = sp.backward(&cache, &r);
    check("fft_power", &x, &g, |v| dot(&sp.powers(v).unwrap(), &r))
}

fn phase_probe(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let timing = relative_timing(11, 0.05);
    let y = random_vec(&mut rng, 11, 1.0);
    let f = rng.random_range(0.5..3.0);
    let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    // A smooth periodic readout keeps the loss continuous across the wrap.
    let readout = |phi: f64| a * (TAU * phi).sin() + b * (TAU * phi).cos();
    let (est, g) = phase_from_signal_with_grad(&y, f, &timing).unwrap();
    let dl = TAU * (a * (TAU * est.phase).cos() - b * (TAU * est.phase).sin());
    let mut analytic: Vec<f64> = g.signal.iter().map(|v| dl * v).collect();
    analytic.push(dl * g.frequency);
    let mut point = y.clone();
    point.push(f);
    check("phase_from_signal", &point, &analytic, |v| {
        let (e, _) = phase_from_signal_with_grad(&v[..11], v[11], &timing).unwrap();
        readout(e.phase)
    })
}

fn head_probe(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bins = 6;
    let head = FrequencyHead {
        mlp: Mlp::new("h", &[bins; 6], Activation::LeakyRelu(0.2), &mut rng).unwrap(),
    };
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * 0.7).collect();
    let powers: Vec<f64> = (0..bins).map(|_| rng.random_range(0.1..3.0)).collect();
    let mut h = head.clone();
    let (_, cache) = h.forward(&powers, &freqs).unwrap();
    let gp = h.backward(&cache, &freqs, 1.0);
    let mut point = powers.clone();
    point.extend(flatten_values(&head));
    let mut analytic = gp;
    analytic.extend(flatten_grads(&h));
    check("frequency_head", &point, &analytic, |v| {
        let mut hh = head.clone();
        assign_values(&mut hh, &v[bins..]);
        hh.forward(&v[..bins], &freqs).unwrap().0
    })
}

fn embed_probe(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, t) = (3, 7);
    let a = random_vec(&mut rng, 2 * d, 1.0);
    let phases = random_vec(&mut rng, t, 1.0);
    let r = random_vec(&mut rng, d * t, 1.0);
    let (ga, gphi) = embed_backward(&a, &phases, &Tensor2::from_vec(d, t, r.clone()).unwrap());
    let mut point = a.clone();
    point.extend(&phases);
    let mut analytic = ga;
    analytic.extend(gphi);
    check("embed", &point, &analytic, |v| dot(embed(&v[..2 * d], &v[2 * d..]).data(), &r))
}

fn vq_probe(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = random_vec(&mut rng, 4, 1.0);
    let entry = random_vec(&mut rng, 4, 1.0);
    let beta = 0.25;
    let l = vq_loss(&raw, &entry, beta);
    // Each argument only receives the gradient of the term where it is not
    // behind a stop-gradient.
    let mut analytic = l.grad_raw.clone();
    analytic.extend(&l.grad_entry);
    let n = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut numeric = numeric_gradient(&raw, &mut |v: &[f64]| beta * n(v, &entry), DEFAULT_STEP);
    numeric.extend(numeric_gradient(&entry, &mut |v: &[f64]| n(&raw, v), DEFAULT_STEP));
    let euclid = compare("vq_loss", &analytic, &numeric, RTOL);

    let l = vq_loss_squared(&raw, &entry, beta);
    let mut analytic = l.grad_raw.clone();
    analytic.extend(&l.grad_entry);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut numeric = numeric_gradient(&raw, &mut |v: &[f64]| beta * sq(v, &entry), DEFAULT_STEP);
    numeric.extend(numeric_gradient(&entry, &mut |v: &[f64]| sq(&raw, v), DEFAULT_STEP));
    let squared = compare("vq_loss_squared", &analytic, &numeric, RTOL);
    if euclid.relative_error >= squared.relative_error { euclid } else { squared }
}

fn l2_probe(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_vec(&mut rng, 8, 1.0);
    let b = random_vec(&mut rng, 8, 1.0);
    let (_, g) = l2_distance_with_grad(&a, &b);
    check("reconstruction_norm", &a, &g, |v| l2_distance_with_grad(v, &b).0)
}

/// Tiny complete model: `J=2, T=9, d=2, K=2`, codebook indices frozen at
/// their forward-pass values.
///
/// Plain finite differences cannot see stop-gradients or the straight-through
/// estimator, so the oracle differentiates the usual linearized surrogate:
/// the decoder receives `Ã + (A₀ − Ã₀)` and each VQ term holds its stopped
/// argument at the base point. The surrogate is rebuilt here from public
/// operations only.
pub fn model_probe(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = ModelConfig::new(2, 2, 9, 30.0);
    cfg.hidden = 3;
    let mut model = VqPae::new("tiny", cfg, &mut rng).unwrap();
    // A random head keeps the probe away from the piecewise-linear kinks
    // that the near-identity initialization places at zero.
    let bins = model.head.bins();
    model.head.mlp = Mlp::new("head", &[bins; 6], Activation::LeakyRelu(0.2), &mut rng).unwrap();
    let mut cb = Codebook::new(2, 2, seed).unwrap();
    for v in cb.entries.value.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let (b, t) = (2, 9);
    let x = random_tensor(&mut rng, 2, b * t, 1.0);
    let w = LossWeights::default();
    let (out, cache) = model.forward(&cb, &x, w, None).unwrap();
    let frozen: Vec<usize> = out.encoded.quantized.iter().map(|q| q.index).collect();
    let raw0: Vec<Vec<f64>> = out.encoded.quantized.iter().map(|q| q.raw.clone()).collect();
    let entry0: Vec<Vec<f64>> = out.encoded.quantized.iter().map(|q| q.quantized.clone()).collect();
    let base = model.clone();
    let base_cb = cb.clone();
    model.zero_grad();
    cb.zero_grad();
    model.backward(&mut cb, &out, cache, w).unwrap();
    let mut analytic = flatten_grads(&model);
    analytic.extend(flatten_grads(&cb));
    let point = model_values(&base, &base_cb);
    let norm = |a: &[f64], b: &[f64]| {
        let sq = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        match w.norm {
            VqNorm::Euclidean => sq.sqrt(),
            VqNorm::Squared => sq,
        }
    };
    check("vqpae (frozen index)", &point, &analytic, |v| {
        let (mut m, mut c) = (base.clone(), base_cb.clone());
        assign_model_values(&mut m, &mut c, v);
        let (enc, _) = m.encode_batch(&c, &x, Some(&frozen)).unwrap();
        let mut p = Tensor2::zeros(2, b * t);
        let mut vq = 0.0;
        for k in 0..b {
            let raw = enc.raw.column(k);
            let q: Vec<f64> = raw.iter().zip(&raw0[k]).zip(&entry0[k]).map(|((r, r0), a0)| r + (a0 - r0)).collect();
            let phases: Vec<f64> = m.timing().iter().map(|ti| enc.phase[k] + enc.frequency[k] * ti).collect();
            let pk = embed(&q, &phases);
            for r in 0..2 {
                p.row_mut(r)[k * t..(k + 1) * t].copy_from_slice(pk.row(r));
            }
            let entry = c.entry(frozen[k]);
            vq += norm(&raw0[k], entry) + w.commitment * norm(&raw, &entry0[k]);
        }
        let recon = m.decode(&p).unwrap();
        let mut rec = 0.0;
        for k in 0..b {
            let mut s = 0.0;
            for r in 0..2 {
                for i in k * t..(k + 1) * t {
                    s += (recon.get(r, i) - x.get(r, i)).powi(2);
                }
            }
            rec += s.sqrt();
        }
        (rec + w.lambda_vq * vq) / b as f64
    })
}

/// Runs every check on [`PROBES`] seeds and returns one report per probe.
pub fn run_all() -> Vec<GradCheckReport> {
    let mut out = Vec::new();
    for s in 0..PROBES {
        out.push(conv_probe(s));
        out.push(mlp_probe(s, Activation::Elu, "mlp(elu)"));
        out.push(mlp_probe(s, Activation::LeakyRelu(0.2), "mlp(leaky_relu)"));
        out.push(pool_probe(s));
        out.push(composition_probe(s));
        out.push(fft_probe(s));
        out.push(phase_probe(s));
        out.push(head_probe(s));
        out.push(embed_probe(s));
        out.push(vq_probe(s));
        out.push(l2_probe(s));
        out.push(model_probe(s));
    }
    out
}
