use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::supernet::{
    softmax_weights, ArchWeights, GradRequest, Mixing, Samples, Supernet, SupernetState,
};

/// A scalar loss over a flat architecture vector, with its gradient.
pub trait ArchObjective {
    fn dim(&self) -> usize;

    fn loss(&self, point: &[f64]) -> Result<f64, AnalysisError>;

    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>, AnalysisError>;

    /// Classification accuracy at `point`, when the objective has one.
    fn accuracy(&self, _point: &[f64]) -> Result<Option<f64>, AnalysisError> {
        Ok(None)
    }

    fn loss_and_accuracy(&self, point: &[f64]) -> Result<(f64, Option<f64>), AnalysisError> {
        Ok((self.loss(point)?, self.accuracy(point)?))
    }
}

/// Coordinates the Hessian is taken in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianBasis {
    /// The architecture logits alpha.
    #[default]
    PreSoftmaxAlpha,
    /// The per-edge mixture weights after the softmax.
    PostSoftmaxWeights,
}

impl HessianBasis {
    pub fn name(self) -> &'static str {
        match self {
            HessianBasis::PreSoftmaxAlpha => "pre_softmax_alpha",
            HessianBasis::PostSoftmaxWeights => "post_softmax_weights",
        }
    }
}

/// Supernet validation loss as a function of the architecture only, with
/// network weights held fixed.
///
/// Every evaluation reuses `noise_seed`, so the loss is a deterministic
/// function of the point even when the corpus contains a noise op.
#[derive(Clone, Copy, Debug)]
pub struct ValidationObjective<'a> {
    pub net: &'a Supernet,
    pub state: &'a SupernetState,
    pub samples: &'a Samples,
    pub basis: HessianBasis,
    pub noise_seed: u64,
}

impl<'a> ValidationObjective<'a> {
    pub fn new(
        net: &'a Supernet,
        state: &'a SupernetState,
        samples: &'a Samples,
        basis: HessianBasis,
        noise_seed: u64,
    ) -> Self {
        Self {
            net,
            state,
            samples,
            basis,
            noise_seed,
        }
    }

    /// The point representing `alpha` in this objective's basis.
    pub fn base_point(&self, alpha: &ArchWeights) -> Vec<f64> {
        match self.basis {
            HessianBasis::PreSoftmaxAlpha => alpha.as_slice().to_vec(),
            HessianBasis::PostSoftmaxWeights => softmax_weights(alpha),
        }
    }

    fn run(
        &self,
        point: &[f64],
        request: GradRequest,
    ) -> Result<crate::supernet::Evaluation, AnalysisError> {
        if point.len() != self.dim() {
            return Err(AnalysisError::Dimension {
                expected: self.dim(),
                got: point.len(),
            });
        }
        let alpha;
        let mixing = match self.basis {
            HessianBasis::PreSoftmaxAlpha => {
                alpha = ArchWeights::from_flat(self.net.space(), point.to_vec())?;
                Mixing::Alpha {
                    alpha: &alpha,
                    delta: None,
                }
            }
            HessianBasis::PostSoftmaxWeights => Mixing::Weights(point),
        };
        Ok(self
            .net
            .evaluate(self.state, mixing, self.samples, self.noise_seed, request)?)
    }
}

impl ArchObjective for ValidationObjective<'_> {
    fn dim(&self) -> usize {
        self.net.space().arch_dim()
    }

    fn loss(&self, point: &[f64]) -> Result<f64, AnalysisError> {
        Ok(self.run(point, GradRequest::NONE)?.loss)
    }

    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>, AnalysisError> {
        let g = self
            .run(point, GradRequest::ARCH)?
            .arch_grad
            .expect("requested arch gradient");
        if g.iter().any(|v| !v.is_finite()) {
            return Err(AnalysisError::NonFiniteGradient);
        }
        Ok(g)
    }

    fn accuracy(&self, point: &[f64]) -> Result<Option<f64>, AnalysisError> {
        Ok(self.loss_and_accuracy(point)?.1)
    }

    fn loss_and_accuracy(&self, point: &[f64]) -> Result<(f64, Option<f64>), AnalysisError> {
        let eval = self.run(point, GradRequest::NONE)?;
        Ok((eval.loss, Some(eval.accuracy(&self.samples.labels))))
    }
}

/// `L(x) = 1/2 (x - c)^T H (x - c) + b^T (x - c) + offset` with symmetric `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticObjective {
    dim: usize,
    hessian: Vec<f64>,
    linear: Vec<f64>,
    center: Vec<f64>,
    offset: f64,
}

impl QuadraticObjective {
    /// `hessian` is row-major `dim x dim` and must be symmetric.
    pub fn new(hessian: Vec<f64>, linear: Vec<f64>, center: Vec<f64>, offset: f64) -> Result<Self, AnalysisError> {
        let dim = linear.len();
        if hessian.len() != dim * dim || center.len() != dim {
            return Err(AnalysisError::Dimension {
                expected: dim * dim,
                got: hessian.len(),
            });
        }
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (hessian[i * dim + j], hessian[j * dim + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Err(AnalysisError::NotSymmetric);
                }
            }
        }
        Ok(Self {
            dim,
            hessian,
            linear,
            center,
            offset,
        })
    }

    /// Pure quadratic form centered at the origin.
    pub fn centered(hessian: Vec<f64>) -> Result<Self, AnalysisError> {
        let dim = (hessian.len() as f64).sqrt().round() as usize;
        Self::new(hessian, vec![0.0; dim], vec![0.0; dim], 0.0)
    }

    pub fn hessian(&self) -> &[f64] {
        &self.hessian
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    fn check(&self, point: &[f64]) -> Result<(), AnalysisError> {
        if point.len() != self.dim {
            return Err(AnalysisError::Dimension {
                expected: self.dim,
                got: point.len(),
            });
        }
        Ok(())
    }

    fn h_times(&self, v: &[f64]) -> Vec<f64> {
        self.hessian
            .chunks(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl ArchObjective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, point: &[f64]) -> Result<f64, AnalysisError> {
        self.check(point)?;
        let d: Vec<f64> = point.iter().zip(&self.center).map(|(x, c)| x - c).collect();
        let hd = self.h_times(&d);
        let quad: f64 = d.iter().zip(&hd).map(|(a, b)| a * b).sum();
        let lin: f64 = d.iter().zip(&self.linear).map(|(a, b)| a * b).sum();
        Ok(0.5 * quad + lin + self.offset)
    }

    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>, AnalysisError> {
        self.check(point)?;
        let d: Vec<f64> = point.iter().zip(&self.center).map(|(x, c)| x - c).collect();
        Ok(self
            .h_times(&d)
            .into_iter()
            .zip(&self.linear)
            .map(|(a, b)| a + b)
            .collect())
    }
}
