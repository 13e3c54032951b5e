#![allow(dead_code)]

use phase_manifold::codebook::Codebook;
use phase_manifold::diff::{Module, Tensor2};
use phase_manifold::vqpae::VqPae;
use rand::Rng;

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor2::from_vec(rows, cols, data).unwrap()
}

pub fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn flatten_values(m: &dyn Module) -> Vec<f64> {
    let mut v = Vec::new();
    m.visit_params(&mut |p| v.extend_from_slice(p.value.data()));
    v
}

pub fn flatten_grads(m: &dyn Module) -> Vec<f64> {
    let mut v = Vec::new();
    m.visit_params(&mut |p| v.extend_from_slice(p.grad.data()));
    v
}

pub fn assign_values(m: &mut dyn Module, values: &[f64]) {
    let mut at = 0;
    m.visit_params_mut(&mut |p| {
        let n = p.len();
        p.value.data_mut().copy_from_slice(&values[at..at + n]);
        at += n;
    });
    assert_eq!(at, values.len());
}

/// All trainable values of one autoencoder followed by the codebook.
pub fn model_values(m: &VqPae, cb: &Codebook) -> Vec<f64> {
    let mut v = flatten_values(m);
    v.extend(flatten_values(cb));
    v
}

pub fn assign_model_values(m: &mut VqPae, cb: &mut Codebook, values: &[f64]) {
    let n = m.param_count();
    assign_values(m, &values[..n]);
    assign_values(cb, &values[n..]);
}
pub mod clisuite;
pub mod gradsuite;
pub mod mathsuite;
pub mod matchsuite;
