//! Learning the quadratic surrogate from samples.
//!
//! * [`fit_ridge`]: regularized least squares on the quadratic feature
//!   expansion, followed by eigenvalue truncation of `A` and a refit of the
//!   remaining blocks.
//! * [`fit_nuclear`]: accelerated proximal gradient on the packed matrix
//!   with a nuclear-norm penalty on the context block `B`.
//! * [`pca_fit`]: the unsupervised projection used by the PCA baselines.
//! * [`cross_validate`]: k-fold selection of a hyperparameter.

mod apg;
mod cv;
mod pca;
mod prox;
mod ridge;

use nalgebra::{DMatrix, DVector};

use crate::linalg::check_dim;
use crate::{Error, Result};

pub use apg::{
    composite_objective, fit_nuclear, fit_nuclear_report, grad_j, lipschitz_constant,
    objective_j, restrict_to_context_span, ApgConfig, ApgReport, StepRule, SvtThreshold,
};
pub use cv::{cross_validate, fold_assignment, CvReport};
pub use pca::{fit_ridge_pca, lift_reduced_model, pca_fit, PcaProjection};
pub use prox::{project_nsd, svt};
pub use ridge::{fit_ridge, fit_ridge_with_floor};
pub(crate) use ridge::weighted_ridge_multi;


/// One experience triple `(θ, c, R(θ, c))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub theta: DVector<f64>,
    pub context: DVector<f64>,
    pub reward: f64,
}

impl Sample {
    pub fn new(theta: DVector<f64>, context: DVector<f64>, reward: f64) -> Self {
        Self {
            theta,
            context,
            reward,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.reward.is_finite()
            && self.theta.iter().all(|v| v.is_finite())
            && self.context.iter().all(|v| v.is_finite())
    }
}

/// Checks a sample batch and returns its `(dθ, dc)`.
pub(crate) fn sample_dims(samples: &[Sample], min_len: usize) -> Result<(usize, usize)> {
    let first = samples.first().ok_or(Error::Empty("samples"))?;
    if samples.len() < min_len {
        return Err(Error::invalid(
            "samples",
            format!("need at least {min_len}, got {}", samples.len()),
        ));
    }
    let (dt, dc) = (first.theta.len(), first.context.len());
    for (i, s) in samples.iter().enumerate() {
        check_dim("sample theta", dt, s.theta.len())?;
        check_dim("sample context", dc, s.context.len())?;
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
    }
    Ok((dt, dc))
}

/// Rows `x_n = [θ_n; c_n; 1]`.
pub(crate) fn design_matrix(samples: &[Sample], dt: usize, dc: usize) -> DMatrix<f64> {
    let n = dt + dc + 1;
    let mut x = DMatrix::zeros(samples.len(), n);
    for (i, s) in samples.iter().enumerate() {
        for j in 0..dt {
            x[(i, j)] = s.theta[j];
        }
        for j in 0..dc {
            x[(i, dt + j)] = s.context[j];
        }
        x[(i, n - 1)] = 1.0;
    }
    x
}

pub(crate) fn rewards(samples: &[Sample]) -> DVector<f64> {
    DVector::from_iterator(samples.len(), samples.iter().map(|s| s.reward))
}

/// Mean squared prediction error of `model` on `samples`.
pub fn mse(model: &crate::QuadraticModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let mut acc = 0.0;
    for s in samples {
        let e = model.predict(&s.theta, &s.context)? - s.reward;
        acc += e * e;
    }
    Ok(acc / samples.len() as f64)
}
