//! Benchmark environments behind a common interface.

mod arm;
mod quadratic;

pub use arm::{ArmConfig, ArmEnv, ArmRollout, Image};
pub use quadratic::QuadraticCostEnv;

use nalgebra::DVector;
use rand::RngCore;

use crate::{GaussianLinearPolicy, Result, Sample};

/// One draw from the context distribution. `hidden` carries whatever the
/// reward needs beyond the observed context (the ball position on the arm
/// task, where noisy pixels do not pin it down exactly).
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub context: DVector<f64>,
    pub hidden: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub reward: f64,
    /// The rollout diverged and the reward was replaced by the floor.
    pub clamped: bool,
    pub hit: Option<bool>,
}

pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim_theta(&self) -> usize;
    fn dim_context(&self) -> usize;
    fn sample_task(&self, rng: &mut dyn RngCore) -> Result<Task>;
    fn outcome(&self, theta: &DVector<f64>, task: &Task) -> Result<Outcome>;

    fn sample_context(&self, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        self.sample_task(rng).map(|t| t.context)
    }

    fn reward(&self, theta: &DVector<f64>, task: &Task) -> Result<f64> {
        self.outcome(theta, task).map(|o| o.reward)
    }

    /// Largest reward any parameter can reach, when known.
    fn reward_upper_bound(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub samples: Vec<Sample>,
    pub clamped: usize,
}

/// Draws `n` tasks, samples `θ ~ π(·|c)` for each and evaluates the reward.
/// Tasks come from `env_rng` and parameters from `policy_rng`, so the two
/// streams never perturb each other.
pub fn collect_samples(
    env: &dyn Environment,
    policy: &GaussianLinearPolicy,
    n: usize,
    env_rng: &mut dyn RngCore,
    policy_rng: &mut dyn RngCore,
) -> Result<Batch> {
    let mut samples = Vec::with_capacity(n);
    let mut clamped = 0;
    for _ in 0..n {
        let task = env.sample_task(env_rng)?;
        let theta = policy.sample(&task.context, &mut *policy_rng)?;
        let out = env.outcome(&theta, &task)?;
        clamped += usize::from(out.clamped);
        samples.push(Sample::new(theta, task.context, out.reward));
    }
    Ok(Batch { samples, clamped })
}
