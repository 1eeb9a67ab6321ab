//! Gaussian search distribution `N(θ | b + K c, Q)`.

use std::f64::consts::{E, PI};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{self, check_dim};
use crate::model::PACKED_SYMMETRY_TOL;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GaussianLinearPolicy {
    b: DVector<f64>,
    k: DMatrix<f64>,
    q: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for GaussianLinearPolicy {
    fn eq(&self, other: &Self) -> bool {
        self.b == other.b && self.k == other.k && self.q == other.q
    }
}

impl GaussianLinearPolicy {
    pub fn new(b: DVector<f64>, k: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let dt = b.len();
        if dt == 0 {
            return Err(Error::Empty("policy mean"));
        }
        check_dim("gain rows", dt, k.nrows())?;
        check_dim("covariance rows", dt, q.nrows())?;
        check_dim("covariance cols", dt, q.ncols())?;
        if !linalg::all_finite(b.iter().chain(k.iter())) {
            return Err(Error::NonFinite("policy mean".into()));
        }
        if !linalg::is_symmetric(&q, PACKED_SYMMETRY_TOL) {
            return Err(Error::NotSymmetric {
                what: "covariance",
                asymmetry: linalg::max_asymmetry(&q),
            });
        }
        let q = linalg::symmetrize(&q);
        let chol = linalg::cholesky(&q, "covariance")?;
        Ok(Self { b, k, q, chol })
    }

    /// Context-free policy with `K = 0` and `Q = scale · I`.
    pub fn isotropic(b: DVector<f64>, dim_context: usize, scale: f64) -> Result<Self> {
        let dt = b.len();
        Self::new(
            b,
            DMatrix::zeros(dt, dim_context),
            DMatrix::identity(dt, dt) * scale,
        )
    }

    pub fn dim_theta(&self) -> usize {
        self.b.len()
    }

    pub fn dim_context(&self) -> usize {
        self.k.ncols()
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn mean_at(&self, context: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("context", self.dim_context(), context.len())?;
        Ok(&self.b + &self.k * context)
    }

    pub fn sample(&self, context: &DVector<f64>, rng: &mut (impl Rng + ?Sized)) -> Result<DVector<f64>> {
        let mean = self.mean_at(context)?;
        let z = DVector::from_fn(self.dim_theta(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(mean + self.chol.l_dirty().lower_triangle() * z)
    }

    /// `½ log det(2πe Q)`.
    pub fn entropy(&self) -> f64 {
        0.5 * (self.dim_theta() as f64 * (2.0 * PI * E).ln() + linalg::log_det(&self.chol))
    }

    pub fn log_density(&self, theta: &DVector<f64>, context: &DVector<f64>) -> Result<f64> {
        check_dim("theta", self.dim_theta(), theta.len())?;
        let diff = theta - self.mean_at(context)?;
        let white = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .ok_or(Error::NotPositiveDefinite("covariance"))?;
        let n = self.dim_theta() as f64;
        Ok(-0.5 * (white.norm_squared() + n * (2.0 * PI).ln() + linalg::log_det(&self.chol)))
    }
}

/// Expected `KL(p ‖ q)` averaged over `contexts`.
pub fn kl(p: &GaussianLinearPolicy, q: &GaussianLinearPolicy, contexts: &[DVector<f64>]) -> Result<f64> {
    if contexts.is_empty() {
        return Err(Error::Empty("contexts"));
    }
    check_dim("policy theta", p.dim_theta(), q.dim_theta())?;
    check_dim("policy context", p.dim_context(), q.dim_context())?;
    let dt = p.dim_theta() as f64;
    let q_inv = linalg::spd_inverse(&q.chol);
    let trace = q_inv.component_mul(&p.q).sum();
    let constant = trace - dt + linalg::log_det(&q.chol) - linalg::log_det(&p.chol);
    let db = &q.b - &p.b;
    let dk = &q.k - &p.k;
    let mut acc = 0.0;
    for c in contexts {
        check_dim("context", p.dim_context(), c.len())?;
        let delta = &db + &dk * c;
        acc += delta.dot(&(&q_inv * &delta));
    }
    Ok(0.5 * (constant + acc / contexts.len() as f64))
}
