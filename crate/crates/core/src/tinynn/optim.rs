use super::tensor::Parameter;
use crate::error::{Error, Result};

/// Momentum SGD with L2 weight decay (PyTorch update convention).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for Sgd {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32, weight_decay: f32) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
        }
    }

    /// Apply one update to every unfrozen parameter. All gradients are
    /// checked first; a non-finite one aborts the step with nothing applied.
    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) -> Result<()> {
        let mut live: Vec<&mut Parameter> = params.into_iter().filter(|p| !p.frozen).collect();
        if let Some(bad) = live.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFiniteGradient(bad.name.clone()));
        }
        for p in live.iter_mut() {
            let Parameter {
                value,
                grad,
                velocity,
                ..
            } = &mut **p;
            for ((w, g), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(velocity.iter_mut())
            {
                let d = g + self.weight_decay * *w;
                *v = self.momentum * *v + d;
                *w -= self.lr * *v;
            }
        }
        Ok(())
    }
}

/// Rescale the gradients of unfrozen parameters so their global L2 norm is
/// at most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, max_norm: f32) -> f32 {
    let mut live: Vec<&mut Parameter> = params.into_iter().filter(|p| !p.frozen).collect();
    let norm = live
        .iter()
        .flat_map(|p| p.grad.data())
        .map(|g| (*g as f64) * (*g as f64))
        .sum::<f64>()
        .sqrt() as f32;
    if norm.is_finite() && norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in live.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinynn::Tensor;

    fn param(w: f32, g: f32) -> Parameter {
        let mut p = Parameter::new("p", Tensor::full(&[1], w));
        p.grad.fill(g);
        p
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut a = param(0.0, 3.0);
        let mut b = param(0.0, 4.0);
        let n = clip_grad_norm([&mut a, &mut b], 1.0);
        assert!((n - 5.0).abs() < 1e-6);
        assert!((a.grad.data()[0] - 0.6).abs() < 1e-6 && (b.grad.data()[0] - 0.8).abs() < 1e-6);
        let mut c = param(0.0, 0.5);
        clip_grad_norm([&mut c], 1.0);
        assert_eq!(c.grad.data()[0], 0.5);
    }

    #[test]
    fn plain_step() {
        let mut p = param(1.0, 0.5);
        Sgd::new(0.1, 0.0, 0.0).step([&mut p]).unwrap();
        assert!((p.value.data()[0] - 0.95).abs() < 1e-7);
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut p = param(1.25, 3.0);
        Sgd::new(0.0, 0.9, 5e-4).step([&mut p]).unwrap();
        assert_eq!(p.value.data()[0].to_bits(), 1.25f32.to_bits());
    }

    #[test]
    fn frozen_unchanged() {
        let mut p = param(0.7, 2.0);
        p.frozen = true;
        for _ in 0..5 {
            Sgd::default().step([&mut p]).unwrap();
        }
        assert_eq!(p.value.data()[0].to_bits(), 0.7f32.to_bits());
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = param(1.0, 1.0);
        let opt = Sgd::new(0.1, 0.9, 0.0);
        opt.step([&mut p]).unwrap();
        opt.step([&mut p]).unwrap();
        // v1 = 1, w1 = 0.9; v2 = 1.9, w2 = 0.71
        assert!((p.value.data()[0] - 0.71).abs() < 1e-6);
    }

    #[test]
    fn non_finite_aborts_whole_step() {
        let mut a = param(1.0, 0.5);
        let mut b = param(1.0, f32::NAN);
        let err = Sgd::new(0.1, 0.0, 0.0).step([&mut a, &mut b]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(_)));
        assert_eq!(a.value.data()[0], 1.0);
    }
}
