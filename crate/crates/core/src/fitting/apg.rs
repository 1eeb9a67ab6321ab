//! Accelerated proximal gradient for
//! `min_H J(H) + λ*‖B‖*  s.t.  A ≺ 0`, with
//! `J(H) = (1/2N) Σ (xₙᵀHxₙ - Rₙ)² + (λ/2)‖H‖²_F`.

use nalgebra::{DMatrix, DVector};

use super::prox::{project_nsd_unchecked, svt_symmetric};
use super::{design_matrix, rewards, sample_dims, Sample};
use crate::linalg::{check_dim, mirror_upper};
use crate::model::DEFAULT_NSD_FLOOR;
use crate::{Error, PackedModelMatrix, QuadraticModel, Result};

/// How the nuclear-norm weight enters the singular value shrinkage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvtThreshold {
    /// Shrink by `step · λ*` (the proximal step for step size `step`).
    Scaled,
    /// Shrink by `λ*` regardless of the step size.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApgConfig {
    /// Ridge weight `λ` on the whole packed matrix.
    pub lambda: f64,
    /// Nuclear-norm weight `λ*` on the context block.
    pub lambda_star: f64,
    /// Gradient step size `τ`.
    pub step: f64,
    pub max_iters: usize,
    /// Rescale the gradient to unit Frobenius norm before stepping.
    pub grad_normalize: bool,
    /// Stop once the relative change of the composite objective drops below this.
    pub stop_rel_tol: f64,
    pub threshold: SvtThreshold,
    /// Eigenvalues of `A` are clipped to at most `-nsd_floor`.
    pub nsd_floor: f64,
    pub step_rule: StepRule,
    /// Run the iterations on centred, block-scaled features. This is an
    /// exact change of variables: the objective, constraint and returned
    /// model are those of the original problem.
    pub precondition: bool,
}

/// Where the gradient step size comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `step`, optionally applied to the unit-norm gradient.
    Fixed,
    /// `1/L` for the Lipschitz constant `L` of `∇J` on the data at hand;
    /// `step` and `grad_normalize` are ignored.
    Lipschitz,
}

impl Default for ApgConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-5,
            lambda_star: 2e-5,
            step: 1e-3,
            max_iters: 300,
            grad_normalize: true,
            stop_rel_tol: 1e-8,
            threshold: SvtThreshold::Scaled,
            nsd_floor: DEFAULT_NSD_FLOOR,
            step_rule: StepRule::Fixed,
            precondition: false,
        }
    }
}

impl ApgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be finite and >= 0"));
        }
        if !(self.lambda_star >= 0.0) {
            return Err(Error::invalid("lambda_star", "must be >= 0"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid("step", "must be finite and > 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be >= 1"));
        }
        if !(self.nsd_floor >= 0.0) {
            return Err(Error::invalid("nsd_floor", "must be >= 0"));
        }
        Ok(())
    }

    fn shrinkage(&self, step: f64) -> f64 {
        match self.threshold {
            SvtThreshold::Scaled => step * self.lambda_star,
            SvtThreshold::Raw => self.lambda_star,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApgReport {
    pub packed: PackedModelMatrix,
    pub model: QuadraticModel,
    /// Composite objective of the returned iterate.
    pub objective: f64,
    /// Iterations actually run.
    pub iterations: usize,
    /// 1-based iteration that produced the returned iterate.
    pub best_iteration: usize,
    /// Dimension of the context subspace the iterations ran in.
    pub working_context_dim: usize,
}

pub fn fit_nuclear(
    samples: &[Sample],
    cfg: &ApgConfig,
    init: &PackedModelMatrix,
) -> Result<QuadraticModel> {
    fit_nuclear_report(samples, cfg, init).map(|r| r.model)
}

/// Runs APG and returns the lowest-objective iterate with bookkeeping.
///
/// When the contexts (together with the context ranges of `init`) span a
/// proper subspace of the context space, the iterations run in an
/// orthonormal basis of that subspace. Every iterate stays inside it, so
/// this is an exact change of coordinates, not an approximation.
pub fn fit_nuclear_report(
    samples: &[Sample],
    cfg: &ApgConfig,
    init: &PackedModelMatrix,
) -> Result<ApgReport> {
    fit_nuclear_impl(samples, cfg, init, true)
}

pub(crate) fn fit_nuclear_impl(
    samples: &[Sample],
    cfg: &ApgConfig,
    init: &PackedModelMatrix,
    allow_reduction: bool,
) -> Result<ApgReport> {
    cfg.validate()?;
    let (dt, dc) = sample_dims(samples, 1)?;
    check_dim("initial packed matrix", dt + dc + 1, init.dim())?;

    let basis = if allow_reduction {
        context_basis(samples, init, dt, dc)
    } else {
        None
    };

    let y = rewards(samples);
    let (x, h0, dw) = match &basis {
        Some(u) => {
            let r = u.ncols();
            let full = design_matrix(samples, dt, dc);
            let mut x = DMatrix::zeros(samples.len(), dt + r + 1);
            x.view_mut((0, 0), (samples.len(), dt))
                .copy_from(&full.view((0, 0), (samples.len(), dt)));
            x.view_mut((0, dt), (samples.len(), r))
                .copy_from(&(full.view((0, dt), (samples.len(), dc)) * u));
            x.column_mut(dt + r).fill(1.0);
            (x, reduce(init.as_matrix(), u, dt), r)
        }
        None => (design_matrix(samples, dt, dc), init.as_matrix().clone(), dc),
    };

    let (x, h0, p_inv, s_theta, s_ctx) = if cfg.precondition {
        let (p, p_inv, s_theta, s_ctx) = preconditioner(&x, dt, dw);
        let xt = &x * p_inv.transpose();
        let mut h0 = p.tr_mul(&(&h0 * &p));
        mirror_upper(&mut h0);
        (xt, h0, Some(p_inv), s_theta, s_ctx)
    } else {
        (x, h0, None, 1.0, 1.0)
    };

    let (step, normalize) = match cfg.step_rule {
        StepRule::Fixed => (cfg.step, cfg.grad_normalize),
        StepRule::Lipschitz => {
            let ridge = p_inv.as_ref().map_or(1.0, |pi| pi.singular_values().max().powi(4));
            (1.0 / (kernel_top_eigenvalue(&x) + cfg.lambda * ridge), false)
        }
    };
    let core = Apg {
        x: &x,
        y: &y,
        dt,
        dc: dw,
        cfg,
        step,
        normalize,
        shrink: cfg.shrinkage(step) / (s_ctx * s_ctx),
        nuclear_weight: cfg.lambda_star / (s_ctx * s_ctx),
        floor: cfg.nsd_floor * s_theta * s_theta,
        p_inv: p_inv.as_ref(),
    };
    let (best, objective, iterations, best_iteration) = core.run(h0)?;
    let best = match &p_inv {
        Some(pi) => {
            let mut h = pi.tr_mul(&(&best * pi));
            mirror_upper(&mut h);
            h
        }
        None => best,
    };

    let h = match &basis {
        Some(u) => lift(&best, u, dt),
        None => best,
    };
    let packed = PackedModelMatrix::from_symmetric_unchecked(h);
    let model = packed.unpack(dt, dc)?;
    Ok(ApgReport {
        packed,
        model,
        objective,
        iterations,
        best_iteration,
        working_context_dim: dw,
    })
}

struct Apg<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    dt: usize,
    dc: usize,
    cfg: &'a ApgConfig,
    step: f64,
    normalize: bool,
    shrink: f64,
    nuclear_weight: f64,
    floor: f64,
    /// `P⁻¹` when iterating on preconditioned features; the ridge term is
    /// measured on the original matrix `P⁻ᵀ H P⁻¹`.
    p_inv: Option<&'a DMatrix<f64>>,
}

/// Centring and per-block scaling `x = P x̃` with
/// `x̃ = [(θ−μθ)/sθ; (c−μc)/sc; 1]`. Returns `(P, P⁻¹, sθ, sc)`.
fn preconditioner(x: &DMatrix<f64>, dt: usize, dc: usize) -> (DMatrix<f64>, DMatrix<f64>, f64, f64) {
    let n = dt + dc + 1;
    let rows = x.nrows() as f64;
    let mut p = DMatrix::identity(n, n);
    let mut p_inv = DMatrix::identity(n, n);
    let mut scales = [1.0, 1.0];
    for (b, (start, len)) in [(0, dt), (dt, dc)].into_iter().enumerate() {
        if len == 0 {
            continue;
        }
        let means: Vec<f64> = (start..start + len).map(|j| x.column(j).sum() / rows).collect();
        let var = (start..start + len)
            .map(|j| x.column(j).iter().map(|v| (v - means[j - start]).powi(2)).sum::<f64>() / rows)
            .sum::<f64>()
            / len as f64;
        let s = if var > 0.0 && var.is_finite() { var.sqrt() } else { 1.0 };
        scales[b] = s;
        for j in start..start + len {
            p[(j, j)] = s;
            p[(j, n - 1)] = means[j - start];
            p_inv[(j, j)] = 1.0 / s;
            p_inv[(j, n - 1)] = -means[j - start] / s;
        }
    }
    (p, p_inv, scales[0], scales[1])
}

/// Upper bound on the top eigenvalue of `[(xₙᵀxₘ)²/N]`, the Lipschitz
/// constant of the data term. The kernel is entrywise non-negative, so the
/// Collatz–Wielandt ratio of any positive vector bounds it from above;
/// power iteration from the all-ones vector makes the bound tight.
fn kernel_top_eigenvalue(x: &DMatrix<f64>) -> f64 {
    let mut k = x * x.transpose();
    k.apply(|v| *v = *v * *v);
    k /= x.nrows() as f64;
    let mut v = DVector::from_element(k.nrows(), 1.0);
    for _ in 0..100 {
        let kv = &k * &v;
        let norm = kv.norm();
        if !(norm > 0.0) {
            return 0.0;
        }
        v = kv / norm;
        v.apply(|e| *e = e.max(1e-300));
    }
    let kv = &k * &v;
    kv.iter().zip(v.iter()).map(|(a, b)| a / b).fold(0.0, f64::max)
}

impl Apg<'_> {
    fn run(&self, h0: DMatrix<f64>) -> Result<(DMatrix<f64>, f64, usize, usize)> {
        let cfg = self.cfg;
        let shrink = self.shrink;
        let (dt, dc) = (self.dt, self.dc);

        let mut h_prev = h0.clone();
        let mut h = h0;
        let (mut t_prev, mut t) = (1.0f64, 1.0f64);
        let mut best: Option<(DMatrix<f64>, f64, usize)> = None;
        let mut last_obj: Option<f64> = None;
        let mut iterations = 0;

        for k in 1..=cfg.max_iters {
            iterations = k;
            let beta = (t_prev - 1.0) / t;
            let y_k = if beta == 0.0 {
                h.clone()
            } else {
                &h + (&h - &h_prev) * beta
            };

            let (mut g, _) = self.gradient(&y_k);
            if self.normalize {
                let norm = g.norm();
                if norm > 0.0 {
                    g /= norm;
                }
            }
            let mut next = y_k - g * self.step;

            let b_plus = next.view((dt, dt), (dc, dc)).into_owned();
            let b_star = if shrink > 0.0 {
                svt_symmetric(&b_plus, shrink)
            } else {
                b_plus
            };
            next.view_mut((dt, dt), (dc, dc)).copy_from(&b_star);
            let a_plus = next.view((0, 0), (dt, dt)).into_owned();
            next.view_mut((0, 0), (dt, dt))
                .copy_from(&project_nsd_unchecked(&a_plus, self.floor));

            let obj = self.composite(&next);
            if !obj.is_finite() {
                return Err(Error::NonFiniteObjective { iteration: k });
            }
            if best.as_ref().is_none_or(|(_, b, _)| obj < *b) {
                best = Some((next.clone(), obj, k));
            }

            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            h_prev = std::mem::replace(&mut h, next);
            t_prev = t;
            t = t_next;

            if let Some(prev) = last_obj {
                if (obj - prev).abs() <= cfg.stop_rel_tol * prev.abs().max(f64::MIN_POSITIVE) {
                    break;
                }
            }
            last_obj = Some(obj);
        }
        let (h, obj, at) = best.expect("at least one iteration");
        Ok((h, obj, iterations, at))
    }

    /// Residuals `xₙᵀHxₙ - Rₙ`.
    fn residuals(&self, h: &DMatrix<f64>) -> DVector<f64> {
        let xh = self.x * h;
        let mut r = DVector::zeros(self.x.nrows());
        for n in 0..self.x.nrows() {
            r[n] = xh.row(n).dot(&self.x.row(n)) - self.y[n];
        }
        r
    }

    fn gradient(&self, h: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let r = self.residuals(h);
        match self.p_inv {
            None => (gram_gradient(self.x, &r, h, self.cfg.lambda), r),
            Some(pi) => {
                let mut g = gram_gradient(self.x, &r, h, 0.0);
                if self.cfg.lambda != 0.0 {
                    let orig = pi.tr_mul(&(h * pi));
                    g += (pi * orig * pi.transpose()) * self.cfg.lambda;
                    mirror_upper(&mut g);
                }
                (g, r)
            }
        }
    }

    fn ridge_norm_squared(&self, h: &DMatrix<f64>) -> f64 {
        match self.p_inv {
            None => h.norm_squared(),
            Some(pi) => pi.tr_mul(&(h * pi)).norm_squared(),
        }
    }

    fn composite(&self, h: &DMatrix<f64>) -> f64 {
        let r = self.residuals(h);
        let n = self.x.nrows() as f64;
        let j = r.norm_squared() / (2.0 * n) + 0.5 * self.cfg.lambda * self.ridge_norm_squared(h);
        let b = h.view((self.dt, self.dt), (self.dc, self.dc)).into_owned();
        j + self.nuclear_weight * nuclear_norm_symmetric(&b)
    }
}

/// `(1/N) Σ rₙ xₙxₙᵀ + λH`, returned exactly symmetric.
fn gram_gradient(x: &DMatrix<f64>, r: &DVector<f64>, h: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut weighted = x.clone();
    for (mut row, &ri) in weighted.row_iter_mut().zip(r.iter()) {
        row *= ri / n;
    }
    let mut g = x.tr_mul(&weighted);
    mirror_upper(&mut g);
    if lambda != 0.0 {
        g += h * lambda;
    }
    g
}

fn nuclear_norm_symmetric(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().iter().map(|l| l.abs()).sum()
}

fn check_packed(h: &PackedModelMatrix, samples: &[Sample]) -> Result<(usize, usize)> {
    let (dt, dc) = sample_dims(samples, 1)?;
    check_dim("packed matrix size", dt + dc + 1, h.dim())?;
    Ok((dt, dc))
}

/// Gradient of `J` at `H`.
pub fn grad_j(h: &PackedModelMatrix, samples: &[Sample], lambda: f64) -> Result<DMatrix<f64>> {
    let (dt, dc) = check_packed(h, samples)?;
    let x = design_matrix(samples, dt, dc);
    let y = rewards(samples);
    let xh = &x * h.as_matrix();
    let r = DVector::from_fn(x.nrows(), |n, _| xh.row(n).dot(&x.row(n)) - y[n]);
    Ok(gram_gradient(&x, &r, h.as_matrix(), lambda))
}

/// The smooth part `J(H)`.
pub fn objective_j(h: &PackedModelMatrix, samples: &[Sample], lambda: f64) -> Result<f64> {
    let (dt, dc) = check_packed(h, samples)?;
    let x = design_matrix(samples, dt, dc);
    let mut acc = 0.0;
    let hm = h.as_matrix();
    for (n, s) in samples.iter().enumerate() {
        let row = x.row(n).transpose();
        let e = row.dot(&(hm * &row)) - s.reward;
        acc += e * e;
    }
    Ok(acc / (2.0 * samples.len() as f64) + 0.5 * lambda * hm.norm_squared())
}

/// `J(H) + λ*‖B‖*`.
pub fn composite_objective(
    h: &PackedModelMatrix,
    samples: &[Sample],
    lambda: f64,
    lambda_star: f64,
) -> Result<f64> {
    let (dt, dc) = check_packed(h, samples)?;
    let j = objective_j(h, samples, lambda)?;
    let b = h.as_matrix().view((dt, dt), (dc, dc)).into_owned();
    Ok(j + lambda_star * nuclear_norm_symmetric(&b))
}

/// Lipschitz constant of `∇J`: the top eigenvalue of `[(xₙᵀxₘ)²/N]` plus `λ`.
/// `1 / lipschitz_constant` is a safe un-normalized step size.
pub fn lipschitz_constant(samples: &[Sample], lambda: f64) -> Result<f64> {
    let (dt, dc) = sample_dims(samples, 1)?;
    let x = design_matrix(samples, dt, dc);
    let mut k = &x * x.transpose();
    k.apply(|v| *v = *v * *v);
    k /= samples.len() as f64;
    Ok(k.symmetric_eigenvalues().max() + lambda)
}

/// Projects the context side of `init` onto the span of the sample contexts.
///
/// The data term cannot see context directions orthogonal to every sample,
/// and both penalties only grow with components along them, so the
/// minimizer lies inside the span. Warm starts projected this way keep
/// the iterations in a subspace no larger than the sample count.
pub fn restrict_to_context_span(init: &PackedModelMatrix, samples: &[Sample]) -> Result<PackedModelMatrix> {
    let (dt, dc) = sample_dims(samples, 1)?;
    check_dim("initial packed matrix", dt + dc + 1, init.dim())?;
    Ok(match context_basis(samples, &PackedModelMatrix::zeros(dt, dc), dt, dc) {
        Some(u) => PackedModelMatrix::from_symmetric_unchecked(lift(&reduce(init.as_matrix(), &u, dt), &u, dt)),
        None => init.clone(),
    })
}

/// Orthonormal basis (dc × r) of the span of the sample contexts and the
/// context-side ranges of `init`, or `None` when it is the whole space.
fn context_basis(
    samples: &[Sample],
    init: &PackedModelMatrix,
    dt: usize,
    dc: usize,
) -> Option<DMatrix<f64>> {
    let h = init.as_matrix();
    let b = h.view((dt, dt), (dc, dc)).into_owned();
    let d_t = h.view((dt, 0), (dc, dt)).into_owned();
    let r2 = h.view((dt, dt + dc), (dc, 1)).into_owned();

    let mut cols: Vec<DVector<f64>> = samples.iter().map(|s| s.context.clone()).collect();
    if b.amax() > 0.0 {
        let eig = b.symmetric_eigen();
        let top = eig.eigenvalues.amax();
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            if l.abs() > 1e-14 * top {
                cols.push(eig.eigenvectors.column(i).into_owned());
            }
        }
    }
    cols.extend(d_t.column_iter().filter(|c| c.amax() > 0.0).map(|c| c.into_owned()));
    if r2.amax() > 0.0 {
        cols.push(r2.column(0).into_owned());
    }
    if cols.len() >= dc {
        return None;
    }

    let m = DMatrix::from_columns(&cols);
    let gram = m.tr_mul(&m);
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.max();
    if top <= 0.0 {
        return None;
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-14 * top)
        .collect();
    if keep.len() >= dc {
        return None;
    }
    let v = DMatrix::from_columns(&keep.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    Some((m * v).qr().q())
}

/// `Tᵀ H T` with `T = diag(I, U, 1)`.
fn reduce(h: &DMatrix<f64>, u: &DMatrix<f64>, dt: usize) -> DMatrix<f64> {
    let dc = u.nrows();
    let r = u.ncols();
    let n = dt + r + 1;
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (dt, dt)).copy_from(&h.view((0, 0), (dt, dt)));
    let b = u.tr_mul(&(h.view((dt, dt), (dc, dc)) * u));
    out.view_mut((dt, dt), (r, r)).copy_from(&b);
    let d = h.view((0, dt), (dt, dc)) * u;
    out.view_mut((0, dt), (dt, r)).copy_from(&d);
    out.view_mut((dt, 0), (r, dt)).copy_from(&d.transpose());
    let last = h.view((0, dt + dc), (dt, 1)).into_owned();
    out.view_mut((0, n - 1), (dt, 1)).copy_from(&last);
    let r2 = u.tr_mul(&h.view((dt, dt + dc), (dc, 1)));
    out.view_mut((dt, n - 1), (r, 1)).copy_from(&r2);
    out[(n - 1, n - 1)] = h[(dt + dc, dt + dc)];
    mirror_upper(&mut out);
    out
}

/// `T Ĥ Tᵀ` with `T = diag(I, U, 1)`.
fn lift(h: &DMatrix<f64>, u: &DMatrix<f64>, dt: usize) -> DMatrix<f64> {
    let dc = u.nrows();
    let r = u.ncols();
    let n = dt + dc + 1;
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (dt, dt)).copy_from(&h.view((0, 0), (dt, dt)));
    let b = u * h.view((dt, dt), (r, r)) * u.transpose();
    out.view_mut((dt, dt), (dc, dc)).copy_from(&b);
    let d = h.view((0, dt), (dt, r)) * u.transpose();
    out.view_mut((0, dt), (dt, dc)).copy_from(&d);
    out.view_mut((0, n - 1), (dt, 1)).copy_from(&h.view((0, dt + r), (dt, 1)));
    let r2 = u * h.view((dt, dt + r), (r, 1));
    out.view_mut((dt, n - 1), (dc, 1)).copy_from(&r2);
    out[(n - 1, n - 1)] = h[(dt + r, dt + r)];
    // Lower triangle from the upper one: keeps B and the border exactly symmetric.
    for j in 0..n {
        for i in (j + 1)..n {
            out[(i, j)] = out[(j, i)];
        }
    }
    out
}
