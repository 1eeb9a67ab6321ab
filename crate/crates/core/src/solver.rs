//! Entropy bound, closed-form dual, dual minimization and the policy update.

use std::f64::consts::{E, PI};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::RngCore;

use crate::envs::{collect_samples, Environment};
use crate::harness::ReplayBuffer;
use crate::linalg::{self, check_dim};
use crate::model::DEFAULT_RANK_TOL;
use crate::{effective_rank, kl, Error, GaussianLinearPolicy, QuadraticModel, Result, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// KL bound `ε`.
    pub epsilon: f64,
    /// Entropy-bound factor `γ`.
    pub gamma: f64,
    /// Minimal entropy `H0`.
    pub h0: f64,
    /// First `(η, ω)` probed; the fixed restarts follow it.
    pub init: (f64, f64),
    /// Evaluation budget per simplex restart.
    pub max_evals: usize,
    /// Relative spread of simplex values at which a restart stops.
    pub tol: f64,
    /// Box on `log η` and `log ω`.
    pub log_bounds: (f64, f64),
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.9,
            gamma: 0.99,
            h0: -150.0,
            init: (1.0, 1.0),
            max_evals: 600,
            tol: 1e-13,
            log_bounds: (-30.0, 30.0),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", "must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma", "must lie in [0, 1]"));
        }
        if !self.h0.is_finite() {
            return Err(Error::invalid("h0", "must be finite"));
        }
        if !(self.init.0 > 0.0 && self.init.1 > 0.0) {
            return Err(Error::invalid("init", "multipliers must be > 0"));
        }
        if self.max_evals < 3 {
            return Err(Error::invalid("max_evals", "must be at least 3"));
        }
        let (lo, hi) = self.log_bounds;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::invalid("log_bounds", "need finite lo < hi"));
        }
        Ok(())
    }
}

/// `β = γ (H(q) − H0) + H0`.
pub fn entropy_bound(q: &GaussianLinearPolicy, cfg: &SolverConfig) -> f64 {
    cfg.gamma * (q.entropy() - cfg.h0) + cfg.h0
}

#[derive(Debug, Clone)]
pub struct DualIntermediates {
    pub eta: f64,
    pub omega: f64,
    /// `ηQ⁻¹b + r1`
    pub f: DVector<f64>,
    /// `ηQ⁻¹ − 2A`
    pub big_f: DMatrix<f64>,
    /// `ηQ⁻¹K + 2D`
    pub l: DMatrix<f64>,
    chol_f: Cholesky<f64, Dyn>,
}

impl DualIntermediates {
    /// `LᵀF⁻¹f − ηKᵀQ⁻¹b`
    pub fn m(&self, q: &GaussianLinearPolicy) -> DVector<f64> {
        let qinv_b = q.cholesky().solve(q.b());
        self.l.tr_mul(&self.chol_f.solve(&self.f)) - q.k().tr_mul(&qinv_b) * self.eta
    }

    /// `LᵀF⁻¹L − ηKᵀQ⁻¹K`
    pub fn big_m(&self, q: &GaussianLinearPolicy) -> DMatrix<f64> {
        let qinv_k = q.cholesky().solve(q.k());
        let mut out = self.l.tr_mul(&self.chol_f.solve(&self.l)) - q.k().tr_mul(&qinv_k) * self.eta;
        linalg::mirror_upper(&mut out);
        out
    }

    pub fn f_inverse(&self) -> DMatrix<f64> {
        linalg::spd_inverse(&self.chol_f)
    }
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub eta: f64,
    pub omega: f64,
    pub dual_value: f64,
    pub intermediates: DualIntermediates,
    /// Dual evaluations spent, including the polish.
    pub evaluations: usize,
}

/// Everything in `g` that does not depend on `(η, ω)`, reduced to `dθ`-sized
/// moments over the context batch so one evaluation costs `O(dθ³)`.
struct DualProblem<'a> {
    model: &'a QuadraticModel,
    q: &'a GaussianLinearPolicy,
    epsilon: f64,
    beta: f64,
    dt: usize,
    n: f64,
    q_inv: DMatrix<f64>,
    q_inv_b: DVector<f64>,
    b_q_b: f64,
    log_det_2pi_q: f64,
    log_det_q: f64,
    /// Columns `Q⁻¹Kcₙ`.
    u: DMatrix<f64>,
    /// Columns `Dcₙ`.
    v: DMatrix<f64>,
    /// Columns `Kcₙ`.
    kc: DMatrix<f64>,
    mean_u: DVector<f64>,
    mean_v: DVector<f64>,
    s_uu: DMatrix<f64>,
    s_uv: DMatrix<f64>,
    s_vv: DMatrix<f64>,
    mean_kqb: f64,
    mean_kqk: f64,
}

struct Evaluation {
    g: f64,
    f: DVector<f64>,
    chol_f: Cholesky<f64, Dyn>,
    f_inv_f: DVector<f64>,
    log_det_f: f64,
}

impl<'a> DualProblem<'a> {
    fn new(
        model: &'a QuadraticModel,
        q: &'a GaussianLinearPolicy,
        contexts: &[DVector<f64>],
        epsilon: f64,
        beta: f64,
    ) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::Empty("contexts"));
        }
        let dt = model.dim_theta();
        let dc = model.dim_context();
        check_dim("policy theta", dt, q.dim_theta())?;
        check_dim("policy context", dc, q.dim_context())?;
        for c in contexts {
            check_dim("context", dc, c.len())?;
        }
        if !beta.is_finite() || !epsilon.is_finite() {
            return Err(Error::NonFinite("dual bounds".into()));
        }
        let n = contexts.len();
        let cmat = DMatrix::from_fn(dc, n, |i, j| contexts[j][i]);
        let kc = q.k() * &cmat;
        let v = model.d() * &cmat;
        let chol_q = q.cholesky();
        let q_inv = linalg::spd_inverse(chol_q);
        let u = &q_inv * &kc;
        let q_inv_b = &q_inv * q.b();
        let nf = n as f64;
        let col_mean = |m: &DMatrix<f64>| DVector::from_fn(dt, |i, _| m.row(i).sum() / nf);
        let mean_u = col_mean(&u);
        let mean_v = col_mean(&v);
        let log_det_q = linalg::log_det(chol_q);
        Ok(Self {
            model,
            q,
            epsilon,
            beta,
            dt,
            n: nf,
            b_q_b: q.b().dot(&q_inv_b),
            log_det_2pi_q: dt as f64 * (2.0 * PI).ln() + log_det_q,
            log_det_q,
            s_uu: &u * u.transpose() / nf,
            s_uv: &u * v.transpose() / nf,
            s_vv: &v * v.transpose() / nf,
            mean_kqb: mean_u.dot(q.b()),
            mean_kqk: kc.component_mul(&u).sum() / nf,
            q_inv,
            q_inv_b,
            u,
            v,
            kc,
            mean_u,
            mean_v,
        })
    }

    fn evaluate(&self, eta: f64, omega: f64) -> Result<Evaluation> {
        if !(eta > 0.0 && omega > 0.0 && eta.is_finite() && omega.is_finite()) {
            return Err(Error::invalid("multipliers", "eta and omega must be finite and > 0"));
        }
        let big_f = &self.q_inv * eta - self.model.a() * 2.0;
        let chol_f = linalg::cholesky(&big_f, "F = ηQ⁻¹ − 2A")?;
        let f = &self.q_inv_b * eta + self.model.r1();
        let f_inv_f = chol_f.solve(&f);
        let log_det_f = linalg::log_det(&chol_f);
        let f_inv = linalg::spd_inverse(&chol_f);

        let mean_l = &self.mean_u * eta + &self.mean_v * 2.0;
        let s_uv_sym = &self.s_uv + self.s_uv.transpose();
        let s_ll = &self.s_uu * (eta * eta) + s_uv_sym * (2.0 * eta) + &self.s_vv * 4.0;
        let linear = mean_l.dot(&f_inv_f) - eta * self.mean_kqb;
        let quadratic = f_inv.component_mul(&s_ll).sum() - eta * self.mean_kqk;

        let s = eta + omega;
        let dt = self.dt as f64;
        let log_det_sigma = dt * (2.0 * PI * s).ln() - log_det_f;
        let g = eta * self.epsilon - omega * self.beta
            + 0.5 * (f.dot(&f_inv_f) - eta * self.b_q_b + s * log_det_sigma - eta * self.log_det_2pi_q)
            + linear
            + 0.5 * quadratic;
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("dual at eta={eta:e}, omega={omega:e}")));
        }
        Ok(Evaluation {
            g,
            f,
            chol_f,
            f_inv_f,
            log_det_f,
        })
    }

    /// `(∂g/∂η, ∂g/∂ω) = (ε − E[KL(π‖q)], H(π) − β)`.
    fn gradient(&self, eta: f64, omega: f64, ev: &Evaluation) -> (f64, f64) {
        let dt = self.dt as f64;
        let s = eta + omega;
        let log_det_sigma = dt * s.ln() - ev.log_det_f;
        let f_inv = linalg::spd_inverse(&ev.chol_f);
        let trace = self.q_inv.component_mul(&f_inv).sum() * s;

        // New mean minus old mean per context: F⁻¹(f + ηuₙ + 2vₙ) − b − Kcₙ.
        let lc = &self.u * eta + &self.v * 2.0;
        let mut delta = ev.chol_f.solve(&lc);
        for mut col in delta.column_iter_mut() {
            col += &ev.f_inv_f - self.q.b();
        }
        delta -= &self.kc;
        let maha = (&self.q_inv * &delta).component_mul(&delta).sum() / self.n;
        let kl = 0.5 * (trace + maha - dt + self.log_det_q - log_det_sigma);
        let entropy = 0.5 * (dt * (2.0 * PI * E).ln() + log_det_sigma);
        (self.epsilon - kl, entropy - self.beta)
    }

    fn intermediates(&self, eta: f64, omega: f64, ev: Evaluation) -> DualIntermediates {
        let l = &self.q_inv * self.q.k() * eta + self.model.d() * 2.0;
        DualIntermediates {
            eta,
            omega,
            f: ev.f,
            big_f: {
                let mut m = &self.q_inv * eta - self.model.a() * 2.0;
                linalg::mirror_upper(&mut m);
                m
            },
            l,
            chol_f: ev.chol_f,
        }
    }
}

/// Evaluates the dual (without the `(η, ω)`-independent term
/// `cᵀBc + cᵀr2 + r0`) and its intermediates.
pub fn dual_value(
    eta: f64,
    omega: f64,
    model: &QuadraticModel,
    q: &GaussianLinearPolicy,
    contexts: &[DVector<f64>],
    epsilon: f64,
    beta: f64,
) -> Result<(f64, DualIntermediates)> {
    let problem = DualProblem::new(model, q, contexts, epsilon, beta)?;
    let ev = problem.evaluate(eta, omega)?;
    let g = ev.g;
    Ok((g, problem.intermediates(eta, omega, ev)))
}

/// `(∂g/∂η, ∂g/∂ω)` at a point, i.e. the constraint slacks of the induced update.
pub fn dual_gradient(
    eta: f64,
    omega: f64,
    model: &QuadraticModel,
    q: &GaussianLinearPolicy,
    contexts: &[DVector<f64>],
    epsilon: f64,
    beta: f64,
) -> Result<(f64, f64)> {
    let problem = DualProblem::new(model, q, contexts, epsilon, beta)?;
    let ev = problem.evaluate(eta, omega)?;
    Ok(problem.gradient(eta, omega, &ev))
}

/// Tracks the lowest dual value seen over every probe.
struct Tracker<'p, 'a> {
    problem: &'p DualProblem<'a>,
    lo: f64,
    hi: f64,
    evals: usize,
    best: Option<([f64; 2], f64)>,
}

impl Tracker<'_, '_> {
    fn clamp(&self, x: [f64; 2]) -> [f64; 2] {
        [x[0].clamp(self.lo, self.hi), x[1].clamp(self.lo, self.hi)]
    }

    fn value(&mut self, x: [f64; 2]) -> f64 {
        self.evals += 1;
        match self.problem.evaluate(x[0].exp(), x[1].exp()) {
            Ok(ev) => {
                if self.best.is_none_or(|(_, b)| ev.g < b) {
                    self.best = Some((x, ev.g));
                }
                ev.g
            }
            Err(_) => f64::INFINITY,
        }
    }

    fn nelder_mead(&mut self, start: [f64; 2], max_evals: usize, tol: f64) {
        let budget = self.evals + max_evals;
        let mut simplex = [start, [start[0] + 1.0, start[1]], [start[0], start[1] + 1.0]];
        simplex = simplex.map(|p| self.clamp(p));
        let mut vals = simplex.map(|p| self.value(p));
        while self.evals < budget {
            let mut order = [0usize, 1, 2];
            order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
            simplex = order.map(|i| simplex[i]);
            vals = order.map(|i| vals[i]);
            let spread = (vals[2] - vals[0]).abs();
            let size = (0..2)
                .map(|d| (simplex[1][d] - simplex[0][d]).abs().max((simplex[2][d] - simplex[0][d]).abs()))
                .fold(0.0f64, f64::max);
            if vals[0].is_finite() && spread <= tol * vals[0].abs().max(1.0) && size < 1e-9 {
                break;
            }
            if size < 1e-14 {
                break;
            }
            let centroid = [
                0.5 * (simplex[0][0] + simplex[1][0]),
                0.5 * (simplex[0][1] + simplex[1][1]),
            ];
            let along = |t: f64| {
                [
                    centroid[0] + t * (simplex[2][0] - centroid[0]),
                    centroid[1] + t * (simplex[2][1] - centroid[1]),
                ]
            };
            let xr = self.clamp(along(-1.0));
            let fr = self.value(xr);
            if fr < vals[0] {
                let xe = self.clamp(along(-2.0));
                let fe = self.value(xe);
                if fe < fr {
                    simplex[2] = xe;
                    vals[2] = fe;
                } else {
                    simplex[2] = xr;
                    vals[2] = fr;
                }
                continue;
            }
            if fr < vals[1] {
                simplex[2] = xr;
                vals[2] = fr;
                continue;
            }
            let (xc, fc) = if fr < vals[2] {
                let x = self.clamp(along(-0.5));
                (x, self.value(x))
            } else {
                let x = self.clamp(along(0.5));
                (x, self.value(x))
            };
            if fc < vals[2].min(fr) {
                simplex[2] = xc;
                vals[2] = fc;
                continue;
            }
            for i in 1..3 {
                let p = [
                    simplex[0][0] + 0.5 * (simplex[i][0] - simplex[0][0]),
                    simplex[0][1] + 0.5 * (simplex[i][1] - simplex[0][1]),
                ];
                simplex[i] = p;
                vals[i] = self.value(p);
            }
        }
    }

    /// Damped Newton on the analytic gradient in log coordinates. Only
    /// steps that do not increase `g` are taken, and coordinates pinned at the
    /// lower bound with an outward-pointing gradient stay fixed.
    fn polish(&mut self, iterations: usize) {
        let Some((mut x, mut gx)) = self.best else {
            return;
        };
        let grad_log = |t: &mut Self, x: [f64; 2]| -> Option<[f64; 2]> {
            t.evals += 1;
            let (eta, omega) = (x[0].exp(), x[1].exp());
            let ev = t.problem.evaluate(eta, omega).ok()?;
            let (ge, go) = t.problem.gradient(eta, omega, &ev);
            Some([eta * ge, omega * go])
        };
        for _ in 0..iterations {
            let Some(gr) = grad_log(self, x) else { return };
            let free = [true, !(x[1] <= self.lo + 1e-12 && gr[1] > 0.0)];
            let h = 1e-6;
            let mut hess = [[0.0; 2]; 2];
            for j in 0..2 {
                if !free[j] {
                    continue;
                }
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let (Some(gp), Some(gm)) = (grad_log(self, xp), grad_log(self, xm)) else {
                    return;
                };
                for i in 0..2 {
                    hess[i][j] = (gp[i] - gm[i]) / (2.0 * h);
                }
            }
            let step = if free[1] {
                let sym = 0.5 * (hess[0][1] + hess[1][0]);
                let det = hess[0][0] * hess[1][1] - sym * sym;
                if hess[0][0] > 0.0 && det > 0.0 {
                    [
                        -(hess[1][1] * gr[0] - sym * gr[1]) / det,
                        -(hess[0][0] * gr[1] - sym * gr[0]) / det,
                    ]
                } else {
                    [-gr[0], -gr[1]]
                }
            } else if hess[0][0] > 0.0 {
                [-gr[0] / hess[0][0], 0.0]
            } else {
                [-gr[0], 0.0]
            };
            if step[0].abs().max(step[1].abs()) < 1e-15 {
                return;
            }
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let cand = self.clamp([x[0] + alpha * step[0], x[1] + alpha * step[1]]);
                let gc = self.value(cand);
                if gc <= gx {
                    x = cand;
                    gx = gc;
                    if self.best.is_none_or(|(_, b)| gc <= b) {
                        self.best = Some((cand, gc));
                    }
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !moved {
                return;
            }
        }
    }
}

/// Minimizes the dual over `(log η, log ω)` with simplex restarts from
/// `cfg.init`, `(1, 1)`, `(10, 1)` and `(1, 10)`, then polishes with Newton
/// steps on the analytic gradient. The returned point has the lowest dual
/// value of every point probed.
pub fn minimize_dual(
    model: &QuadraticModel,
    q: &GaussianLinearPolicy,
    contexts: &[DVector<f64>],
    epsilon: f64,
    beta: f64,
    cfg: &SolverConfig,
) -> Result<DualSolution> {
    cfg.validate()?;
    let problem = DualProblem::new(model, q, contexts, epsilon, beta)?;
    let (lo, hi) = cfg.log_bounds;
    let mut tracker = Tracker {
        problem: &problem,
        lo,
        hi,
        evals: 0,
        best: None,
    };
    let mut starts = vec![[cfg.init.0.ln(), cfg.init.1.ln()]];
    for s in [[0.0, 0.0], [10f64.ln(), 0.0], [0.0, 10f64.ln()]] {
        if !starts.contains(&s) {
            starts.push(s);
        }
    }
    for s in &starts {
        tracker.nelder_mead(*s, cfg.max_evals, cfg.tol);
    }
    // A second pass from the incumbent tightens the simplex around it.
    if let Some((x, _)) = tracker.best {
        tracker.nelder_mead(x, cfg.max_evals, cfg.tol);
    }
    tracker.polish(30);

    let evaluations = tracker.evals;
    let Some((x, _)) = tracker.best else {
        return Err(Error::DualFailed(format!(
            "no finite dual value in {evaluations} evaluations"
        )));
    };
    let (eta, omega) = (x[0].exp(), x[1].exp());
    let ev = problem.evaluate(eta, omega)?;
    let dual_value = ev.g;
    Ok(DualSolution {
        eta,
        omega,
        dual_value,
        intermediates: problem.intermediates(eta, omega, ev),
        evaluations,
    })
}

/// `b' = F⁻¹f`, `K' = F⁻¹L`, `Q' = (η + ω) F⁻¹`.
pub fn update_policy(
    model: &QuadraticModel,
    q: &GaussianLinearPolicy,
    sol: &DualSolution,
) -> Result<GaussianLinearPolicy> {
    let it = &sol.intermediates;
    check_dim("solution theta", model.dim_theta(), it.f.len())?;
    check_dim("solution context", q.dim_context(), it.l.ncols())?;
    let b = it.chol_f.solve(&it.f);
    let k = it.chol_f.solve(&it.l);
    let cov = it.f_inverse() * (sol.eta + sol.omega);
    GaussianLinearPolicy::new(b, k, cov)
}

/// Anything that turns the current replay buffer into a surrogate model.
pub trait ModelFitter {
    fn fit(&mut self, samples: &[Sample]) -> Result<QuadraticModel>;
}

impl<F> ModelFitter for F
where
    F: FnMut(&[Sample]) -> Result<QuadraticModel>,
{
    fn fit(&mut self, samples: &[Sample]) -> Result<QuadraticModel> {
        self(samples)
    }
}

#[derive(Debug, Clone)]
pub struct CmoreState {
    pub policy: GaussianLinearPolicy,
    pub buffer: ReplayBuffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationDiagnostics {
    pub eta: f64,
    pub omega: f64,
    pub dual_value: f64,
    pub rank_b: usize,
    /// `E[KL(π_new ‖ q)]` over the buffer contexts.
    pub expected_kl: f64,
    pub entropy: f64,
    pub beta: f64,
    pub buffer_len: usize,
    /// Rollouts in this batch whose reward hit the environment's floor.
    pub clamped_rewards: usize,
}

#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub policy: GaussianLinearPolicy,
    pub model: QuadraticModel,
    pub diagnostics: IterationDiagnostics,
}

/// One pass of collect, fit, bound, dual and update. The state's buffer is
/// extended in place; the state's policy is left for the caller to replace.
pub fn cmore_iteration(
    state: &mut CmoreState,
    env: &dyn Environment,
    fitter: &mut dyn ModelFitter,
    cfg: &SolverConfig,
    n_samples: usize,
    env_rng: &mut dyn RngCore,
    policy_rng: &mut dyn RngCore,
) -> Result<IterationOutcome> {
    let batch = collect_samples(env, &state.policy, n_samples, env_rng, policy_rng)?;
    state.buffer.push(batch.samples);
    let samples = state.buffer.samples();
    let model = fitter.fit(&samples)?;
    let contexts: Vec<DVector<f64>> = samples.iter().map(|s| s.context.clone()).collect();
    let q = &state.policy;
    let beta = entropy_bound(q, cfg);
    let sol = minimize_dual(&model, q, &contexts, cfg.epsilon, beta, cfg)?;
    let policy = update_policy(&model, q, &sol)?;
    let diagnostics = IterationDiagnostics {
        eta: sol.eta,
        omega: sol.omega,
        dual_value: sol.dual_value,
        rank_b: effective_rank(model.b(), DEFAULT_RANK_TOL),
        expected_kl: kl(&policy, q, &contexts)?,
        entropy: policy.entropy(),
        beta,
        buffer_len: samples.len(),
        clamped_rewards: batch.clamped,
    };
    Ok(IterationOutcome {
        policy,
        model,
        diagnostics,
    })
}
