use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, Outcome, Task};
use crate::linalg::check_dim;
use crate::{Error, QuadraticModel, Result};

const MAX_CONDITION: f64 = 1e6;
const MAX_REDRAWS: usize = 100;

/// `R(θ, c) = −‖θ − T1 c̃‖²` with `c̃ = Ĩ T2⁻¹ c`: only `dc̃` directions of
/// the observed context matter, the rest are distractors.
#[derive(Debug, Clone)]
pub struct QuadraticCostEnv {
    t1: DMatrix<f64>,
    t2: DMatrix<f64>,
    /// First `dc̃` rows of `T2⁻¹`.
    selector: DMatrix<f64>,
    context_range: f64,
}

impl QuadraticCostEnv {
    pub fn new(seed: u64, dim_theta: usize, dim_context: usize, dim_latent: usize) -> Result<Self> {
        if dim_theta == 0 || dim_latent == 0 || dim_latent >= dim_context {
            return Err(Error::invalid(
                "dims",
                format!("need dθ ≥ 1 and 0 < dc̃ < dc, got ({dim_theta}, {dim_context}, {dim_latent})"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t1 = DMatrix::from_fn(dim_theta, dim_latent, |_, _| rng.random_range(0.0..1.0));
        for _ in 0..MAX_REDRAWS {
            let t2 = DMatrix::from_fn(dim_context, dim_context, |_, _| rng.random_range(0.0..1.0));
            let sv = t2.clone().singular_values();
            let cond: f64 = sv.max() / sv.min();
            if cond.is_finite() && cond < MAX_CONDITION {
                let inv = t2.clone().try_inverse().ok_or_else(|| Error::Singular("T2".into()))?;
                let selector = inv.rows(0, dim_latent).into_owned();
                return Ok(Self {
                    t1,
                    t2,
                    selector,
                    context_range: 10.0,
                });
            }
        }
        Err(Error::Environment(format!(
            "T2 stayed ill-conditioned after {MAX_REDRAWS} draws"
        )))
    }

    /// The benchmark's default shape: `dθ = 10`, `dc = 25`, `dc̃ = 3`.
    pub fn standard(seed: u64) -> Result<Self> {
        Self::new(seed, 10, 25, 3)
    }

    pub fn t1(&self) -> &DMatrix<f64> {
        &self.t1
    }

    pub fn t2(&self) -> &DMatrix<f64> {
        &self.t2
    }

    pub fn dim_latent(&self) -> usize {
        self.t1.ncols()
    }

    pub fn latent(&self, context: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("context", self.t2.nrows(), context.len())?;
        Ok(&self.selector * context)
    }

    /// Best parameter for a context, `T1 c̃`.
    pub fn optimum(&self, context: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.t1 * self.latent(context)?)
    }

    /// The reward written as a quadratic model; exact everywhere.
    pub fn true_model(&self) -> QuadraticModel {
        let dt = self.t1.nrows();
        let dc = self.t2.nrows();
        let gain = &self.t1 * &self.selector;
        QuadraticModel::new(
            -DMatrix::identity(dt, dt),
            -(gain.transpose() * &gain),
            gain,
            DVector::zeros(dt),
            DVector::zeros(dc),
            0.0,
        )
        .expect("blocks are finite and correctly shaped")
    }
}

impl Environment for QuadraticCostEnv {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn dim_theta(&self) -> usize {
        self.t1.nrows()
    }

    fn dim_context(&self) -> usize {
        self.t2.nrows()
    }

    fn sample_task(&self, rng: &mut dyn RngCore) -> Result<Task> {
        let r = self.context_range;
        let context = DVector::from_fn(self.dim_context(), |_, _| rng.random_range(-r..=r));
        Ok(Task {
            context,
            hidden: Vec::new(),
        })
    }

    fn outcome(&self, theta: &DVector<f64>, task: &Task) -> Result<Outcome> {
        check_dim("theta", self.dim_theta(), theta.len())?;
        let reward = -(theta - self.optimum(&task.context)?).norm_squared();
        Ok(Outcome {
            reward,
            clamped: false,
            hit: None,
        })
    }

    fn reward_upper_bound(&self) -> Option<f64> {
        Some(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_is_seeded() {
        let a = QuadraticCostEnv::standard(3).unwrap();
        let b = QuadraticCostEnv::standard(3).unwrap();
        assert_eq!(a.t1(), b.t1());
        assert_eq!(a.t2(), b.t2());
        assert_eq!(a.t1().shape(), (10, 3));
        assert_eq!(a.t2().shape(), (25, 25));
        assert!(a.t1().iter().chain(a.t2().iter()).all(|v| (0.0..1.0).contains(v)));
        assert!(QuadraticCostEnv::new(0, 10, 3, 3).is_err());
    }

    #[test]
    fn selector_algebra() {
        let env = QuadraticCostEnv::standard(4).unwrap();
        let prod = &env.selector * env.t2();
        let want = DMatrix::identity(25, 25).rows(0, 3).into_owned();
        assert!((prod - want).amax() < 1e-8);
    }

    #[test]
    fn reward_properties() {
        let env = QuadraticCostEnv::standard(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let task = env.sample_task(&mut rng).unwrap();
            let opt = env.optimum(&task.context).unwrap();
            assert!(env.reward(&opt, &task).unwrap().abs() < 1e-20);
            let theta = DVector::from_fn(10, |_, _| rng.random_range(-5.0..5.0));
            let r = env.reward(&theta, &task).unwrap();
            assert!(r <= 0.0);
            assert_eq!(r.to_bits(), env.reward(&theta, &task).unwrap().to_bits());
            let m = env.true_model().predict(&theta, &task.context).unwrap();
            assert!((m - r).abs() < 1e-8 * r.abs().max(1.0));
        }
        assert!(env.reward(&DVector::zeros(3), &env.sample_task(&mut rng).unwrap()).is_err());
    }

    #[test]
    fn distractors_do_not_matter() {
        let env = QuadraticCostEnv::standard(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let latent = DVector::from_fn(25, |i, _| if i < 3 { rng.random_range(-1.0..1.0) } else { 0.0 });
        let mut junk = latent.clone();
        for i in 3..25 {
            junk[i] = rng.random_range(-5.0..5.0);
        }
        let c1 = env.t2() * &latent;
        let c2 = env.t2() * &junk;
        let t1 = Task { context: c1, hidden: vec![] };
        let t2 = Task { context: c2, hidden: vec![] };
        let theta = DVector::from_fn(10, |i, _| i as f64 * 0.1);
        let (r1, r2) = (env.reward(&theta, &t1).unwrap(), env.reward(&theta, &t2).unwrap());
        assert!((r1 - r2).abs() < 1e-9 * r1.abs().max(1.0));
    }

    #[test]
    fn true_model_has_latent_rank() {
        let env = QuadraticCostEnv::standard(7).unwrap();
        assert_eq!(crate::effective_rank(env.true_model().b(), 1e-6), 3);
    }

    #[test]
    fn contexts_are_bounded_and_centred() {
        let env = QuadraticCostEnv::standard(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut acc = DVector::zeros(25);
        let n = 100_000 / 25 * 25;
        for _ in 0..n / 25 {
            let c = env.sample_context(&mut rng).unwrap();
            assert!(c.iter().all(|v| (-10.0..=10.0).contains(v)));
            acc += c;
        }
        let mean = acc.sum() / n as f64;
        assert!(mean.abs() < 0.1);
        let a = env.sample_context(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = env.sample_context(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
