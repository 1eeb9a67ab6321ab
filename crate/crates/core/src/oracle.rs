//! Slow, independent reference computations for checking the fast paths.
//!
//! Nothing here shares code with the routines it checks beyond the data
//! types: the dual is integrated numerically, gradients are finite
//! differences of a separately written objective, and the 2×2 proximal
//! operators are found by exhaustive search.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::solver::{entropy_bound, minimize_dual, update_policy, SolverConfig};
use crate::{kl, Error, GaussianLinearPolicy, QuadraticModel, Result, Sample};

fn log_gaussian(theta: &DVector<f64>, mean: &DVector<f64>, cov_inv: &DMatrix<f64>, log_norm: f64) -> f64 {
    let d = theta - mean;
    -0.5 * d.dot(&(cov_inv * &d)) - log_norm
}

/// `log ∫ exp f(θ) dθ` over `ℝ^d` (`d ≤ 2`) for a concave quadratic `f`, by
/// the trapezoid rule on a box of ±`half_width` marginal standard
/// deviations around the peak with `points` nodes per axis.
pub fn log_integral_gaussian_like(
    f: &dyn Fn(&DVector<f64>) -> f64,
    dim: usize,
    half_width: f64,
    points: usize,
) -> Result<f64> {
    if !(1..=2).contains(&dim) {
        return Err(Error::invalid("dim", "quadrature supports 1 or 2 dimensions"));
    }
    // f is quadratic, so central differences with any step are exact up to
    // rounding; a unit step keeps rounding small.
    let h = 1.0;
    let x0 = DVector::zeros(dim);
    let f0 = f(&x0);
    let unit = |i: usize| DVector::from_fn(dim, |k, _| if k == i { h } else { 0.0 });
    let mut grad = DVector::zeros(dim);
    let mut hess = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let ei = unit(i);
        grad[i] = (f(&(&x0 + &ei)) - f(&(&x0 - &ei))) / (2.0 * h);
        hess[(i, i)] = (f(&(&x0 + &ei)) - 2.0 * f0 + f(&(&x0 - &ei))) / (h * h);
        for j in 0..i {
            let ej = unit(j);
            let v = (f(&(&x0 + &ei + &ej)) - f(&(&x0 + &ei - &ej)) - f(&(&x0 - &ei + &ej)) + f(&(&x0 - &ei - &ej)))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let neg_inv = (-&hess)
        .try_inverse()
        .ok_or_else(|| Error::Singular("integrand curvature".into()))?;
    if (0..dim).any(|i| !(neg_inv[(i, i)] > 0.0)) {
        return Err(Error::invalid("f", "integrand is not concave"));
    }
    let peak = &neg_inv * &grad;
    let sd: Vec<f64> = (0..dim).map(|i| neg_inv[(i, i)].sqrt()).collect();
    let fmax = f(&peak);

    let n = points.max(3);
    let nodes = |i: usize| -> (Vec<f64>, f64) {
        let lo = peak[i] - half_width * sd[i];
        let step = 2.0 * half_width * sd[i] / (n - 1) as f64;
        ((0..n).map(|k| lo + step * k as f64).collect(), step)
    };
    let weight = |k: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
    let (xs, hx) = nodes(0);
    let mut acc = 0.0;
    if dim == 1 {
        for (k, &x) in xs.iter().enumerate() {
            acc += weight(k) * (f(&DVector::from_element(1, x)) - fmax).exp();
        }
        Ok(fmax + (acc * hx).ln())
    } else {
        let (ys, hy) = nodes(1);
        let mut p = DVector::zeros(2);
        for (k, &x) in xs.iter().enumerate() {
            for (l, &y) in ys.iter().enumerate() {
                p[0] = x;
                p[1] = y;
                acc += weight(k) * weight(l) * (f(&p) - fmax).exp();
            }
        }
        Ok(fmax + (acc * hx * hy).ln())
    }
}

/// The dual in its integral form,
/// `ηε − ωβ + (η+ω) · mean_c log ∫ q(θ|c)^{η/(η+ω)} exp(R̂(θ,c)/(η+ω)) dθ`,
/// by quadrature. It differs from the closed form by the mean of
/// `cᵀBc + cᵀr₂ + r₀`, which does not depend on `η`, `ω` or `θ`.
#[allow(clippy::too_many_arguments)]
pub fn dual_by_quadrature(
    eta: f64,
    omega: f64,
    model: &QuadraticModel,
    q: &GaussianLinearPolicy,
    contexts: &[DVector<f64>],
    epsilon: f64,
    beta: f64,
    points: usize,
) -> Result<f64> {
    if contexts.is_empty() {
        return Err(Error::Empty("contexts"));
    }
    let d = q.dim_theta();
    let cov_inv = q.q().clone().try_inverse().ok_or_else(|| Error::Singular("Q".into()))?;
    let log_norm = 0.5 * ((2.0 * PI).powi(d as i32) * q.q().determinant()).ln();
    let s = eta + omega;
    let mut total = 0.0;
    for c in contexts {
        let mean = q.b() + q.k() * c;
        let f = |theta: &DVector<f64>| -> f64 {
            eta / s * log_gaussian(theta, &mean, &cov_inv, log_norm) + model.predict(theta, c).unwrap_or(f64::NAN) / s
        };
        total += log_integral_gaussian_like(&f, d, 12.0, points)?;
    }
    Ok(eta * epsilon - omega * beta + s * total / contexts.len() as f64)
}

/// The constant separating the integral form of the dual from the closed form.
pub fn dual_context_constant(model: &QuadraticModel, contexts: &[DVector<f64>]) -> f64 {
    contexts
        .iter()
        .map(|c| c.dot(&(model.b() * c)) + c.dot(model.r2()) + model.r0())
        .sum::<f64>()
        / contexts.len().max(1) as f64
}

/// `J(H) = 1/(2N) Σ (xₙᵀ H xₙ − yₙ)² + λ/2 ‖H‖²_F` with `xₙ = [θ; c; 1]`.
pub fn objective_j_naive(h: &DMatrix<f64>, samples: &[Sample], lambda: f64) -> f64 {
    let mut acc = 0.0;
    for s in samples {
        let x: Vec<f64> = s.theta.iter().chain(s.context.iter()).copied().chain([1.0]).collect();
        let mut quad = 0.0;
        for (i, xi) in x.iter().enumerate() {
            for (j, xj) in x.iter().enumerate() {
                quad += xi * h[(i, j)] * xj;
            }
        }
        acc += (quad - s.reward).powi(2);
    }
    acc / (2.0 * samples.len() as f64) + 0.5 * lambda * h.iter().map(|v| v * v).sum::<f64>()
}

/// Central-difference gradient of `J` with every entry perturbed on its
/// own, i.e. the gradient over all (not only symmetric) matrices.
pub fn grad_j_finite_difference(h: &DMatrix<f64>, samples: &[Sample], lambda: f64, step: f64) -> DMatrix<f64> {
    let n = h.nrows();
    DMatrix::from_fn(n, h.ncols(), |i, j| {
        let mut hp = h.clone();
        let mut hm = h.clone();
        hp[(i, j)] += step;
        hm[(i, j)] -= step;
        (objective_j_naive(&hp, samples, lambda) - objective_j_naive(&hm, samples, lambda)) / (2.0 * step)
    })
}

/// Minimizes a convex function on `[lo, hi]` by ternary search. Value
/// comparisons limit the argmin to about `√ε` relative accuracy.
fn ternary(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) <= f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    0.5 * (a + b)
}

/// `argmin_X ½‖X − Y‖²_F + τ‖X‖_*` for a 2×2 `Y`, by search.
///
/// For 2×2 matrices `‖X‖_* = max(‖P₁x‖, ‖P₂x‖)` with
/// `P₁x = (x₁₁+x₂₂, x₁₂−x₂₁)/√2` and `P₂x = (x₁₁−x₂₂, x₁₂+x₂₁)/√2` scaled
/// by `√2`; the two maps are orthonormal coordinates of `ℝ⁴`, so the
/// problem separates into the lengths `s = ‖P₁x‖`, `t = ‖P₂x‖` with the
/// directions of `P₁y`, `P₂y`. The remaining convex problem in `(s, t)` is
/// solved by nested ternary search.
pub fn svt_2x2_brute_force(y: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    assert_eq!((y.nrows(), y.ncols()), (2, 2));
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let u = [r * (y[(0, 0)] + y[(1, 1)]), r * (y[(0, 1)] - y[(1, 0)])];
    let v = [r * (y[(0, 0)] - y[(1, 1)]), r * (y[(0, 1)] + y[(1, 0)])];
    let alpha = u[0].hypot(u[1]);
    let beta = v[0].hypot(v[1]);
    let w = tau * std::f64::consts::SQRT_2;
    let obj = |s: f64, t: f64| 0.5 * (s - alpha).powi(2) + 0.5 * (t - beta).powi(2) + w * s.max(t);
    let hi = alpha.max(beta) + 1.0;
    let best_t = |s: f64| ternary(0.0, hi, |t| obj(s, t));
    let s = ternary(0.0, hi, |s| obj(s, best_t(s)));
    let t = best_t(s);
    let dir = |p: [f64; 2], n: f64| if n > 0.0 { [p[0] / n, p[1] / n] } else { [0.0, 0.0] };
    let (du, dv) = (dir(u, alpha), dir(v, beta));
    let a = [s * du[0], s * du[1]];
    let b = [t * dv[0], t * dv[1]];
    // Invert the orthonormal change of coordinates.
    DMatrix::from_row_slice(
        2,
        2,
        &[r * (a[0] + b[0]), r * (a[1] + b[1]), r * (b[1] - a[1]), r * (a[0] - b[0])],
    )
}

/// `argmin ‖X − Y‖_F` over symmetric `X ≼ −floor·I` for a 2×2 `Y`.
///
/// The minimizer is `sym(Y)` when feasible and otherwise lies on the
/// boundary, where `X + floor·I` is zero or `−r·uuᵀ` for a unit `u`. The
/// boundary is scanned over the angle of `u` on a fine grid, then refined.
pub fn project_nsd_2x2_brute_force(y: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    assert_eq!((y.nrows(), y.ncols()), (2, 2));
    let off = 0.5 * (y[(0, 1)] + y[(1, 0)]);
    // Shift so the constraint becomes plain negative semidefiniteness.
    let (a, b, c) = (y[(0, 0)] + floor, off, y[(1, 1)] + floor);
    let feasible = a <= 0.0 && c <= 0.0 && a * c - b * b >= 0.0;
    let shifted = if feasible {
        [a, b, c]
    } else {
        let dist = |m: [f64; 3]| (m[0] - a).powi(2) + 2.0 * (m[1] - b).powi(2) + (m[2] - c).powi(2);
        let rank_one = |phi: f64| -> [f64; 3] {
            let (u0, u1) = (phi.cos(), phi.sin());
            // Best r ≥ 0 for X = −r uuᵀ: r = max(0, −uᵀYu).
            let r = (-(a * u0 * u0 + 2.0 * b * u0 * u1 + c * u1 * u1)).max(0.0);
            [-r * u0 * u0, -r * u0 * u1, -r * u1 * u1]
        };
        let grid = 20_000;
        let mut best_phi = 0.0;
        let mut best = f64::INFINITY;
        for k in 0..grid {
            let phi = PI * k as f64 / grid as f64;
            let d = dist(rank_one(phi));
            if d < best {
                best = d;
                best_phi = phi;
            }
        }
        let span = PI / grid as f64;
        let phi = ternary(best_phi - span, best_phi + span, |p| dist(rank_one(p)));
        let cand = rank_one(phi);
        if dist(cand) <= dist([0.0; 3]) {
            cand
        } else {
            [0.0; 3]
        }
    };
    DMatrix::from_row_slice(
        2,
        2,
        &[shifted[0] - floor, shifted[1], shifted[1], shifted[2] - floor],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub expected_kl: f64,
    pub entropy: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub eta: f64,
    pub omega: f64,
}

impl KktReport {
    pub fn kl_slack(&self) -> f64 {
        self.epsilon - self.expected_kl
    }

    pub fn entropy_slack(&self) -> f64 {
        self.entropy - self.beta
    }

    /// Both constraints hold within `tol`, and at least one is active within `active_tol`.
    pub fn holds(&self, tol: f64, active_tol: f64) -> bool {
        self.kl_slack() >= -tol
            && self.entropy_slack() >= -tol
            && (self.kl_slack().abs() <= active_tol || self.entropy_slack().abs() <= active_tol)
    }
}

/// Runs one exact-model update and measures the constraints of the result.
pub fn kkt_check(
    model: &QuadraticModel,
    q: &GaussianLinearPolicy,
    contexts: &[DVector<f64>],
    cfg: &SolverConfig,
) -> Result<KktReport> {
    let beta = entropy_bound(q, cfg);
    let sol = minimize_dual(model, q, contexts, cfg.epsilon, beta, cfg)?;
    let pi = update_policy(model, q, &sol)?;
    Ok(KktReport {
        expected_kl: kl(&pi, q, contexts)?,
        entropy: pi.entropy(),
        epsilon: cfg.epsilon,
        beta,
        eta: sol.eta,
        omega: sol.omega,
    })
}
