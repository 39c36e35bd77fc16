//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! All arithmetic is `f64`. There is no implicit broadcasting: the only
//! mixed-shape ops are scalar scaling ([`OpKind::Scale`]) and the explicit
//! row-bias add ([`OpKind::BiasAdd`]).

mod tape;
mod tensor;

pub use tape::{softmax_in_place, GradMap, OpKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible input shapes {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward needs a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("finite difference: f is not finite at coordinate {coordinate}")]
    NonFinite { coordinate: usize },
    #[error("finite difference step must be positive, got {0}")]
    BadStep(f64),
}

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor, TensorError>
where
    F: FnMut(&Tensor) -> f64,
{
    if !(h > 0.0) {
        return Err(TensorError::BadStep(h));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(TensorError::NonFinite { coordinate: i });
        }
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_is_exact_on_quadratics() {
        let g = finite_diff_grad(|t| t.item() * t.item(), &Tensor::scalar(3.0), 1e-4).unwrap();
        assert!((g.item() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn central_difference_of_sine_at_zero() {
        let h = 1e-4;
        let g = finite_diff_grad(|t| t.item().sin(), &Tensor::scalar(0.0), h).unwrap();
        assert!((g.item() - 1.0).abs() <= h * h);
    }

    #[test]
    fn non_finite_values_are_reported() {
        let err = finite_diff_grad(|t| 1.0 / t.item().abs().min(0.0), &Tensor::scalar(1.0), 1e-3)
            .unwrap_err();
        assert_eq!(err, TensorError::NonFinite { coordinate: 0 });
        assert!(finite_diff_grad(|t| t.item(), &Tensor::scalar(1.0), 0.0).is_err());
    }
}
