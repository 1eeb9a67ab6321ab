//! Randomized comparisons of the fast routines against [`crate::oracle`].
//!
//! Each check draws its instances from a seeded generator, so a failure is
//! reproducible from the seed alone. Used by `cmore check` and the
//! acceptance tests.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fitting::{fit_nuclear_report, mse};
use crate::oracle;
use crate::solver::dual_value;
use crate::{
    effective_rank, fit_ridge, grad_j, project_nsd, svt, ApgConfig, Environment,
    GaussianLinearPolicy, PackedModelMatrix, QuadraticCostEnv, QuadraticModel, Result, Sample,
    SolverConfig, StepRule,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, s: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-s..s))
}

fn uniform_vec(rng: &mut impl Rng, n: usize, s: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-s..s))
}

fn spd(rng: &mut impl Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let l = uniform(rng, n, n, 1.0);
    &l * l.transpose() + DMatrix::identity(n, n) * shift
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

/// Closed-form dual against quadrature of the integral form over 50 random
/// instances with `dθ ∈ {1, 2}` and `dc ∈ {1, 3}`.
pub fn dual_equivalence(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let dt = 1 + i % 2;
        let dc = if (i / 2) % 2 == 0 { 1 } else { 3 };
        let model = QuadraticModel::new(
            -spd(&mut rng, dt, 0.3),
            uniform(&mut rng, dc, dc, 1.0),
            uniform(&mut rng, dt, dc, 0.5),
            uniform_vec(&mut rng, dt, 1.0),
            uniform_vec(&mut rng, dc, 1.0),
            rng.random_range(-1.0..1.0),
        )?;
        let q = GaussianLinearPolicy::new(
            uniform_vec(&mut rng, dt, 1.0),
            uniform(&mut rng, dt, dc, 0.5),
            spd(&mut rng, dt, 0.3) * 0.5,
        )?;
        let contexts: Vec<_> = (0..4).map(|_| uniform_vec(&mut rng, dc, 1.0)).collect();
        let eta = 10f64.powf(rng.random_range(-0.5..1.0));
        let omega = 10f64.powf(rng.random_range(-1.0..1.0));
        let (epsilon, beta) = (0.5, q.entropy() - 0.5);
        let (closed, _) = dual_value(eta, omega, &model, &q, &contexts, epsilon, beta)?;
        let points = if dt == 1 { 801 } else { 241 };
        let quad = oracle::dual_by_quadrature(eta, omega, &model, &q, &contexts, epsilon, beta, points)?;
        let closed = closed + oracle::dual_context_constant(&model, &contexts);
        worst = worst.max(relative(closed, quad));
    }
    Ok(CheckOutcome {
        name: "dual matches quadrature",
        passed: worst <= 1e-4,
        detail: format!("50 instances, worst relative error {worst:.2e} (tol 1e-4)"),
    })
}

/// Exact-model updates on the quadratic-cost task respect both constraints
/// with at least one active.
pub fn kkt_exact_model(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SolverConfig::default();
    let mut failures = 0;
    let (mut worst_kl, mut worst_h): (f64, f64) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..20 {
        let env = QuadraticCostEnv::standard(rng.random())?;
        let dt = env.dim_theta();
        let b = DVector::from_fn(dt, |_, _| rng.random_range(0.0..5.0));
        let k = uniform(&mut rng, dt, env.dim_context(), 0.1);
        let scale = 10f64.powf(rng.random_range(-1.0..4.0));
        let q = GaussianLinearPolicy::new(b, k, spd(&mut rng, dt, 1.0) * scale)?;
        let contexts = (0..35)
            .map(|_| env.sample_context(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        let r = oracle::kkt_check(&env.true_model(), &q, &contexts, &cfg)?;
        worst_kl = worst_kl.min(r.kl_slack());
        worst_h = worst_h.min(r.entropy_slack());
        if !r.holds(1e-4, 1e-3) {
            failures += 1;
        }
    }
    Ok(CheckOutcome {
        name: "exact-model update satisfies KKT",
        passed: failures == 0,
        detail: format!(
            "20 instances, {failures} failed; min KL slack {worst_kl:.2e}, min entropy slack {worst_h:.2e}"
        ),
    })
}

/// `svt` and `project_nsd` against search-based 2×2 argmins.
pub fn prox_operators(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_svt, mut worst_nsd): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let y = uniform(&mut rng, 2, 2, 3.0);
        let tau = rng.random_range(0.0..2.0);
        let fast = svt(&y, tau)?;
        worst_svt = worst_svt.max((fast - oracle::svt_2x2_brute_force(&y, tau)).amax());

        let s = uniform(&mut rng, 2, 2, 3.0);
        let s = (&s + s.transpose()) * 0.5;
        let floor = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.5) };
        let fast = project_nsd(&s, floor)?;
        worst_nsd = worst_nsd.max((fast - oracle::project_nsd_2x2_brute_force(&s, floor)).amax());
    }
    Ok(CheckOutcome {
        name: "prox operators match brute force",
        passed: worst_svt <= 1e-6 && worst_nsd <= 1e-6,
        detail: format!("100 instances, worst svt {worst_svt:.2e}, worst nsd {worst_nsd:.2e} (tol 1e-6)"),
    })
}

/// `grad_j` against central differences of an independently written `J`.
pub fn gradient(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let dt = rng.random_range(1..4);
        let dc = rng.random_range(1..4);
        let n = rng.random_range(5..30);
        let samples: Vec<Sample> = (0..n)
            .map(|_| {
                Sample::new(
                    uniform_vec(&mut rng, dt, 1.0),
                    uniform_vec(&mut rng, dc, 1.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect();
        let d = dt + dc + 1;
        let h = uniform(&mut rng, d, d, 1.0);
        let h = PackedModelMatrix::from_matrix((&h + h.transpose()) * 0.5)?;
        let lambda = rng.random_range(0.0..0.1);
        let fast = grad_j(&h, &samples, lambda)?;
        let fd = oracle::grad_j_finite_difference(h.as_matrix(), &samples, lambda, 1e-5);
        worst = worst.max((&fast - &fd).norm() / fd.norm().max(1e-12));
    }
    Ok(CheckOutcome {
        name: "gradient matches finite differences",
        passed: worst <= 1e-5,
        detail: format!("20 instances, worst relative error {worst:.2e} (tol 1e-5)"),
    })
}

fn rank_two_samples(rng: &mut impl Rng, truth: &QuadraticModel, n: usize) -> Result<Vec<Sample>> {
    (0..n)
        .map(|_| {
            let t = uniform_vec(rng, truth.dim_theta(), 1.0);
            let c = uniform_vec(rng, truth.dim_context(), 1.0);
            let r = truth.predict(&t, &c)?;
            Ok(Sample::new(t, c, r))
        })
        .collect()
}

/// Sweeps `λ*` over six decades on noiseless data whose true `B` has rank
/// two and looks for a fit that recovers the rank without giving up much
/// held-out accuracy against ridge.
pub fn low_rank_recovery(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dt, dc) = (3, 8);
    let p = uniform(&mut rng, dc, 2, 1.0);
    let truth = QuadraticModel::new(
        -spd(&mut rng, dt, 0.5),
        -(&p * p.transpose()),
        uniform(&mut rng, dt, dc, 0.5),
        uniform_vec(&mut rng, dt, 1.0),
        uniform_vec(&mut rng, dc, 1.0),
        1.0,
    )?;
    let train = rank_two_samples(&mut rng, &truth, 500)?;
    let test = rank_two_samples(&mut rng, &truth, 500)?;
    let lambda = 1e-6;
    let ridge_mse = mse(&fit_ridge(&train, lambda)?, &test)?;
    let mut found = Vec::new();
    let mut summary = Vec::new();
    for k in 0..6 {
        let ls = lambda * 10f64.powf((k + 1) as f64 / 8.0);
        let cfg = ApgConfig {
            lambda,
            lambda_star: ls,
            max_iters: 50_000,
            grad_normalize: false,
            stop_rel_tol: 0.0,
            step_rule: StepRule::Lipschitz,
            precondition: true,
            ..ApgConfig::default()
        };
        let r = fit_nuclear_report(&train, &cfg, &PackedModelMatrix::zeros(dt, dc))?;
        let rank = effective_rank(r.model.b(), 1e-6);
        let m = mse(&r.model, &test)?;
        summary.push(format!("{ls:e}:rank {rank}, mse {m:.1e}"));
        if rank == 2 && m <= 1.5 * ridge_mse {
            found.push(ls);
        }
    }
    Ok(CheckOutcome {
        name: "low-rank recovery",
        passed: !found.is_empty(),
        detail: format!("ridge mse {ridge_mse:.1e}; {}", summary.join("; ")),
    })
}

/// Every fast check with its default instance seed.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        dual_equivalence(seed)?,
        kkt_exact_model(seed.wrapping_add(1))?,
        prox_operators(seed.wrapping_add(2))?,
        gradient(seed.wrapping_add(3))?,
        low_rank_recovery(seed.wrapping_add(4))?,
    ])
}
