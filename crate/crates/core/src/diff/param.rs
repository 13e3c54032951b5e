use super::Tensor2;
use crate::error::{Error, Result};

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor2,
    pub grad: Tensor2,
    m: Tensor2,
    v: Tensor2,
    step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor2) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: Tensor2::zeros(r, c),
            m: Tensor2::zeros(r, c),
            v: Tensor2::zeros(r, c),
            step: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.value.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Anything that owns trainable parameters.
pub trait Module {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// One bias-corrected Adam update from the accumulated gradient.
    ///
    /// Rejects the whole update (leaving the parameter untouched) when the
    /// gradient contains a non-finite value.
    pub fn step(&self, p: &mut Parameter) -> Result<()> {
        if !p.grad.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let g = p.grad.data();
        let m = p.m.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
        }
        let v = p.v.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
        }
        let (m, v) = (p.m.data(), p.v.data());
        for ((x, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn step_module(&self, module: &mut dyn Module) -> Result<()> {
        let mut res = Ok(());
        module.visit_params_mut(&mut |p| {
            if res.is_ok() {
                res = self.step(p);
            }
        });
        res
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64]) -> Parameter {
        Parameter::new("w", Tensor2::from_vec(1, values.len(), values.to_vec()).unwrap())
    }

    #[test]
    fn first_step_is_sign_scaled_by_lr() {
        let adam = Adam::with_lr(0.01);
        let mut p = param(&[1.0, -2.0, 0.5]);
        p.grad = Tensor2::from_vec(1, 3, vec![0.3, -4.0, 1e-3]).unwrap();
        adam.step(&mut p).unwrap();
        let before = [1.0, -2.0, 0.5];
        for (i, g) in [0.3f64, -4.0, 1e-3].iter().enumerate() {
            let want = before[i] - 0.01 * g / (g.abs() + 1e-8);
            assert!((p.value.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let adam = Adam::default();
        let mut p = param(&[0.25, -1.5]);
        for _ in 0..5 {
            adam.step(&mut p).unwrap();
        }
        assert_eq!(p.value.data(), &[0.25, -1.5]);
        assert_eq!(p.step_count(), 5);
    }

    #[test]
    fn non_finite_gradient_is_reported_by_name() {
        let adam = Adam::default();
        let mut p = param(&[1.0]);
        p.name = "enc.conv1.weight".into();
        p.grad.data_mut()[0] = f64::NAN;
        let err = adam.step(&mut p).unwrap_err();
        assert!(err.to_string().contains("enc.conv1.weight"));
        assert_eq!(p.value.data(), &[1.0]);
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let adam = Adam::with_lr(3e-3);
            let mut p = param(&[0.1, 0.2, 0.3]);
            for s in 0..20 {
                p.grad = Tensor2::from_vec(1, 3, vec![s as f64 * 0.1, -0.5, (s as f64).sin()]).unwrap();
                adam.step(&mut p).unwrap();
            }
            p.value
        };
        assert_eq!(run(), run());
    }
}
