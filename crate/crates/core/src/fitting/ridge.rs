use nalgebra::{DMatrix, DVector};

use super::{prox::project_nsd_unchecked, sample_dims, Sample};
use crate::linalg;
use crate::model::DEFAULT_NSD_FLOOR;
use crate::{Error, QuadraticModel, Result};

/// Ridge fit of the quadratic surrogate.
///
/// Minimizes `(1/2N) Σ (R̂(θₙ, cₙ) - Rₙ)² + (λ/2)‖H‖²_F` over all blocks,
/// which is the smooth part of the nuclear-norm objective. `A` is then
/// clipped to be negative definite and the remaining blocks are refit with
/// `A` held fixed.
pub fn fit_ridge(samples: &[Sample], lambda: f64) -> Result<QuadraticModel> {
    fit_ridge_with_floor(samples, lambda, DEFAULT_NSD_FLOOR)
}

pub fn fit_ridge_with_floor(
    samples: &[Sample],
    lambda: f64,
    nsd_floor: f64,
) -> Result<QuadraticModel> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda", "must be finite and non-negative"));
    }
    if !(nsd_floor >= 0.0) {
        return Err(Error::invalid("nsd_floor", "must be non-negative"));
    }
    let (dt, dc) = sample_dims(samples, 2)?;

    let full = Features {
        dt,
        dc,
        with_a: true,
    };
    let (phi, y) = full.build(samples, None);
    let w = weighted_ridge(&phi, &y, &full.penalty(), lambda)?;
    let first = full.to_model(&w, None)?;

    let a = project_nsd_unchecked(first.a(), nsd_floor);
    if &a == first.a() {
        return Ok(first);
    }

    let rest = Features {
        dt,
        dc,
        with_a: false,
    };
    let (phi, y) = rest.build(samples, Some(&a));
    let w = weighted_ridge(&phi, &y, &rest.penalty(), lambda)?;
    rest.to_model(&w, Some(a))
}

/// Quadratic feature expansion. Upper-triangular monomials of `θθᵀ` and
/// `ccᵀ` (off-diagonals doubled), `2θᵢcⱼ`, `θ`, `c`, `1`.
struct Features {
    dt: usize,
    dc: usize,
    with_a: bool,
}

impl Features {
    fn n_sym(d: usize) -> usize {
        d * (d + 1) / 2
    }

    fn len(&self) -> usize {
        let a = if self.with_a { Self::n_sym(self.dt) } else { 0 };
        a + Self::n_sym(self.dc) + self.dt * self.dc + self.dt + self.dc + 1
    }

    fn build(&self, samples: &[Sample], fixed_a: Option<&DMatrix<f64>>) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.len();
        let mut phi = DMatrix::zeros(samples.len(), p);
        let mut y = DVector::zeros(samples.len());
        let mut row = vec![0.0; p];
        for (n, s) in samples.iter().enumerate() {
            self.fill(&s.theta, &s.context, &mut row);
            for (j, &v) in row.iter().enumerate() {
                phi[(n, j)] = v;
            }
            y[n] = match fixed_a {
                Some(a) => s.reward - s.theta.dot(&(a * &s.theta)),
                None => s.reward,
            };
        }
        (phi, y)
    }

    fn fill(&self, theta: &DVector<f64>, c: &DVector<f64>, row: &mut [f64]) {
        let mut k = 0;
        if self.with_a {
            for i in 0..self.dt {
                for j in i..self.dt {
                    let m = if i == j { 1.0 } else { 2.0 };
                    row[k] = m * theta[i] * theta[j];
                    k += 1;
                }
            }
        }
        for i in 0..self.dc {
            for j in i..self.dc {
                let m = if i == j { 1.0 } else { 2.0 };
                row[k] = m * c[i] * c[j];
                k += 1;
            }
        }
        for i in 0..self.dt {
            for j in 0..self.dc {
                row[k] = 2.0 * theta[i] * c[j];
                k += 1;
            }
        }
        for i in 0..self.dt {
            row[k] = theta[i];
            k += 1;
        }
        for j in 0..self.dc {
            row[k] = c[j];
            k += 1;
        }
        row[k] = 1.0;
    }

    /// Per-parameter weights so that `wᵀ diag(Λ) w = ‖H‖²_F`.
    fn penalty(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.len());
        let sym = |d: usize, out: &mut Vec<f64>| {
            for i in 0..d {
                for j in i..d {
                    out.push(if i == j { 1.0 } else { 2.0 });
                }
            }
        };
        if self.with_a {
            sym(self.dt, &mut out);
        }
        sym(self.dc, &mut out);
        out.extend(std::iter::repeat_n(2.0, self.dt * self.dc));
        out.extend(std::iter::repeat_n(0.5, self.dt + self.dc));
        out.push(1.0);
        DVector::from_vec(out)
    }

    fn to_model(&self, w: &DVector<f64>, fixed_a: Option<DMatrix<f64>>) -> Result<QuadraticModel> {
        let (dt, dc) = (self.dt, self.dc);
        let mut k = 0;
        let sym = |d: usize, k: &mut usize| {
            let mut m = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in i..d {
                    m[(i, j)] = w[*k];
                    m[(j, i)] = w[*k];
                    *k += 1;
                }
            }
            m
        };
        let a = match fixed_a {
            Some(a) => a,
            None => sym(dt, &mut k),
        };
        let b = sym(dc, &mut k);
        let mut d = DMatrix::zeros(dt, dc);
        for i in 0..dt {
            for j in 0..dc {
                d[(i, j)] = w[k];
                k += 1;
            }
        }
        let r1 = DVector::from_iterator(dt, w.rows(k, dt).iter().copied());
        k += dt;
        let r2 = DVector::from_iterator(dc, w.rows(k, dc).iter().copied());
        k += dc;
        QuadraticModel::new(a, b, d, r1, r2, w[k])
    }
}

/// Solves `min (1/2N)‖Φw - y‖² + (λ/2) Σ pᵢ wᵢ²`.
///
/// Uses the primal normal equations when there are no more features than
/// samples and the kernel (dual) form otherwise; both give the same
/// minimizer when `λ > 0`.
pub(crate) fn weighted_ridge(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    let (n, p) = phi.shape();
    let nf = n as f64;
    if p <= n || lambda == 0.0 {
        let mut g = phi.tr_mul(phi) / nf;
        for i in 0..p {
            g[(i, i)] += lambda * penalty[i];
        }
        let rhs = phi.tr_mul(y) / nf;
        solve_spd(g, rhs, lambda > 0.0)
    } else {
        let inv_sqrt = penalty.map(|v| 1.0 / v.sqrt());
        let mut psi = phi.clone();
        for (mut col, &s) in psi.column_iter_mut().zip(inv_sqrt.iter()) {
            col *= s;
        }
        let mut k = &psi * psi.transpose();
        for i in 0..n {
            k[(i, i)] += nf * lambda;
        }
        let alpha = solve_spd(k, y.clone(), true)?;
        let v = psi.tr_mul(&alpha);
        Ok(v.component_mul(&inv_sqrt))
    }
}

/// Weighted multi-output ridge: `argmin Σ wₙ‖yₙ − Cᵀφₙ‖² + λ‖C₁..‖²_F` with
/// `φₙ`, `yₙ` the rows of `phi` and `y`. The first feature is the intercept
/// and is not penalized. Returns `C` (features × outputs).
pub(crate) fn weighted_ridge_multi(
    phi: &DMatrix<f64>,
    y: &DMatrix<f64>,
    weights: &DVector<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let mut wphi = phi.clone();
    for (mut row, &w) in wphi.row_iter_mut().zip(weights.iter()) {
        row *= w;
    }
    let mut g = phi.tr_mul(&wphi);
    for i in 1..g.nrows() {
        g[(i, i)] += lambda;
    }
    let rhs = wphi.tr_mul(y);
    let mut out = DMatrix::zeros(phi.ncols(), y.ncols());
    for j in 0..y.ncols() {
        let col = solve_spd(g.clone(), rhs.column(j).into_owned(), lambda > 0.0)?;
        out.set_column(j, &col);
    }
    Ok(out)
}

/// Jacobi-scaled Cholesky solve. When the system is known to be positive
/// definite in exact arithmetic, a failed factorization falls back to a
/// clipped eigendecomposition.
fn solve_spd(mut g: DMatrix<f64>, mut rhs: DVector<f64>, regularized: bool) -> Result<DVector<f64>> {
    let n = g.nrows();
    let scale: DVector<f64> = g
        .diagonal()
        .map(|d| if d > 0.0 && d.is_finite() { 1.0 / d.sqrt() } else { 1.0 });
    for j in 0..n {
        for i in 0..n {
            g[(i, j)] *= scale[i] * scale[j];
        }
    }
    rhs.component_mul_assign(&scale);
    linalg::mirror_upper(&mut g);

    if !linalg::all_finite(g.iter()) || !linalg::all_finite(rhs.iter()) {
        return Err(Error::NonFinite("ridge normal equations".into()));
    }
    let z = match g.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None if regularized => {
            let eig = g.symmetric_eigen();
            let lmax = eig.eigenvalues.amax();
            let cut = lmax * 1e-14;
            let proj = eig.eigenvectors.tr_mul(&rhs);
            let coef = DVector::from_iterator(
                n,
                proj.iter()
                    .zip(eig.eigenvalues.iter())
                    .map(|(&p, &l)| if l > cut { p / l } else { 0.0 }),
            );
            &eig.eigenvectors * coef
        }
        None => {
            return Err(Error::Singular(
                "normal equations are singular; use lambda > 0".into(),
            ))
        }
    };
    Ok(z.component_mul(&scale))
}
