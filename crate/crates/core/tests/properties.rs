use cmore::envs::ArmConfig;
use cmore::fitting::{fit_nuclear_report, objective_j};
use cmore::oracle;
use cmore::solver::entropy_bound;
use cmore::{
    creps_dual, creps_update, minimize_dual, project_nsd, svt, update_policy, ApgConfig, ArmEnv,
    CrepsConfig, Environment, GaussianLinearPolicy, PackedModelMatrix, QuadraticCostEnv,
    QuadraticModel, Sample, SolverConfig,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn samples(rng: &mut ChaCha8Rng, dt: usize, dc: usize, n: usize) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample::new(vec(rng, dt), vec(rng, dc), rng.random_range(-2.0..2.0)))
        .collect()
}

fn instance(rng: &mut ChaCha8Rng, dt: usize, dc: usize) -> (QuadraticModel, GaussianLinearPolicy, Vec<DVector<f64>>) {
    let la = mat(rng, dt, dt);
    let model = QuadraticModel::new(
        -(&la * la.transpose()) - DMatrix::identity(dt, dt) * 0.1,
        sym(mat(rng, dc, dc)),
        mat(rng, dt, dc),
        vec(rng, dt),
        vec(rng, dc),
        rng.random_range(-1.0..1.0),
    )
    .unwrap();
    let lq = mat(rng, dt, dt);
    let q = GaussianLinearPolicy::new(vec(rng, dt), mat(rng, dt, dc), &lq * lq.transpose() + DMatrix::identity(dt, dt)).unwrap();
    let ctx = (0..8).map(|_| vec(rng, dc)).collect();
    (model, q, ctx)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_is_convex_along_lines(seed in any::<u64>(), dt in 1usize..4, dc in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = samples(&mut rng, dt, dc, 15);
        let d = dt + dc + 1;
        let z = sym(mat(&mut rng, d, d));
        let v = sym(mat(&mut rng, d, d));
        let j = |t: f64| objective_j(&PackedModelMatrix::from_matrix(&z + &v * t).unwrap(), &s, 1e-3).unwrap();
        for _ in 0..20 {
            let t = rng.random_range(-1.0..1.0);
            let h = 1e-2;
            let second = j(t + h) - 2.0 * j(t) + j(t - h);
            prop_assert!(second >= -1e-9 * j(t).abs().max(1.0), "{second}");
        }
    }

    #[test]
    fn svt_on_diagonal_matches_search(a in -5.0f64..5.0, b in -5.0f64..5.0, tau in 0.0f64..3.0) {
        let y = DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b]);
        let fast = svt(&y, tau).unwrap();
        let slow = oracle::svt_2x2_brute_force(&y, tau);
        prop_assert!((fast - slow).amax() < 1e-6);
    }

    #[test]
    fn nsd_projection_matches_search(seed in any::<u64>(), floor in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = sym(mat(&mut rng, 2, 2) * 3.0);
        let fast = project_nsd(&y, floor).unwrap();
        let slow = oracle::project_nsd_2x2_brute_force(&y, floor);
        prop_assert!((&fast - slow).amax() < 1e-6);
        prop_assert!(fast.symmetric_eigenvalues().max() <= -floor + 1e-12);
    }

    #[test]
    fn apg_iterates_stay_symmetric(seed in any::<u64>(), iters in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = samples(&mut rng, 2, 3, 20);
        let cfg = ApgConfig { max_iters: iters, lambda_star: 0.05, ..ApgConfig::default() };
        let r = fit_nuclear_report(&s, &cfg, &PackedModelMatrix::zeros(2, 3)).unwrap();
        let h = r.packed.as_matrix();
        prop_assert_eq!(h.clone(), h.transpose());
    }

    #[test]
    fn updated_covariance_is_pd_and_ignores_r0(seed in any::<u64>(), dt in 1usize..4, dc in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (model, q, ctx) = instance(&mut rng, dt, dc);
        let cfg = SolverConfig::default();
        let beta = entropy_bound(&q, &cfg);
        let sol = minimize_dual(&model, &q, &ctx, 0.5, beta, &cfg).unwrap();
        let p = update_policy(&model, &q, &sol).unwrap();
        prop_assert!(p.q().clone().cholesky().is_some());
        let shifted = model.clone().with_r0(model.r0() + 123.0);
        let p2 = update_policy(&shifted, &q, &sol).unwrap();
        prop_assert_eq!(p, p2);
    }

    #[test]
    fn creps_weights_ignore_reward_shift_and_keep_q_pd(seed in any::<u64>(), shift in -64i32..64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Dyadic rewards and integer shifts keep every subtraction exact.
        let s: Vec<Sample> = (0..30)
            .map(|_| Sample::new(vec(&mut rng, 2), vec(&mut rng, 2), rng.random_range(-64i32..64) as f64 / 8.0))
            .collect();
        let shifted: Vec<Sample> = s
            .iter()
            .map(|x| Sample::new(x.theta.clone(), x.context.clone(), x.reward + shift as f64))
            .collect();
        let cfg = CrepsConfig::default();
        let a = creps_update(&s, None, &cfg).unwrap();
        let b = creps_update(&shifted, None, &cfg).unwrap();
        prop_assert_eq!(&a.weights, &b.weights);
        prop_assert!(a.policy.q().clone().cholesky().is_some());
    }

    #[test]
    fn creps_dual_is_convex_along_lines(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = DMatrix::from_fn(20, 3, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let r = vec(&mut rng, 20);
        let (eta0, deta) = (rng.random_range(0.6..3.0), rng.random_range(-0.5..0.5));
        let (v0, dv) = (vec(&mut rng, 3), vec(&mut rng, 3));
        let g = |t: f64| creps_dual(eta0 + deta * t, &(&v0 + &dv * t), &phi, &r, 0.5);
        for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let h = 1e-2;
            let second = g(t + h) - 2.0 * g(t) + g(t - h);
            prop_assert!(second >= -1e-9 * g(t).abs().max(1.0), "{second}");
        }
    }

    #[test]
    fn rewards_are_pure(seed in any::<u64>()) {
        let env = QuadraticCostEnv::standard(seed % 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let task = env.sample_task(&mut rng).unwrap();
        let theta = DVector::from_fn(env.dim_theta(), |_, _| rng.random_range(-3.0..3.0));
        prop_assert_eq!(env.reward(&theta, &task).unwrap().to_bits(), env.reward(&theta, &task).unwrap().to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn arm_replay_reproduces_trajectory(seed in any::<u64>()) {
        let arm = ArmEnv::new(ArmConfig { width: 8, height: 6, ..ArmConfig::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = DVector::from_fn(arm.dim_theta(), |_, _| rng.random_range(-2.0..2.0));
        let ball = arm.sample_ball(&mut rng);
        let roll = arm.rollout(&theta, ball).unwrap();
        prop_assert_eq!(arm.replay(&roll.accelerations), roll.trajectory);
    }
}
