//! Seeded problem instances shared by the benchmarks.

use cmore::{GaussianLinearPolicy, QuadraticCostEnv, QuadraticModel, Result, Sample};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` samples on the standard quadratic-cost task (dθ = 10, dc = 25) drawn
/// around a random linear policy.
pub fn quadratic_task_samples(seed: u64, n: usize) -> Result<(QuadraticCostEnv, Vec<Sample>)> {
    use cmore::Environment;
    let env = QuadraticCostEnv::standard(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = GaussianLinearPolicy::isotropic(
        DVector::from_fn(env.dim_theta(), |_, _| rng.random_range(0.0..5.0)),
        env.dim_context(),
        1.0,
    )?;
    let samples = (0..n)
        .map(|_| {
            let task = env.sample_task(&mut rng)?;
            let theta = policy.sample(&task.context, &mut rng)?;
            let r = env.reward(&theta, &task)?;
            Ok(Sample::new(theta, task.context, r))
        })
        .collect::<Result<_>>()?;
    Ok((env, samples))
}

/// A concave model with a random policy and context batch for dual benchmarks.
pub fn dual_instance(
    seed: u64,
    dim_theta: usize,
    dim_context: usize,
    contexts: usize,
) -> Result<(QuadraticModel, GaussianLinearPolicy, Vec<DVector<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let la = u(dim_theta, dim_theta);
    let lq = u(dim_theta, dim_theta);
    let model = QuadraticModel::new(
        -(&la * la.transpose()) - DMatrix::identity(dim_theta, dim_theta),
        u(dim_context, dim_context),
        u(dim_theta, dim_context) * 0.3,
        u(dim_theta, 1).column(0).into_owned(),
        u(dim_context, 1).column(0).into_owned(),
        0.0,
    )?;
    let policy = GaussianLinearPolicy::new(
        u(dim_theta, 1).column(0).into_owned(),
        u(dim_theta, dim_context) * 0.1,
        &lq * lq.transpose() + DMatrix::identity(dim_theta, dim_theta),
    )?;
    let ctx = (0..contexts).map(|_| u(dim_context, 1).column(0).into_owned()).collect();
    Ok((model, policy, ctx))
}
