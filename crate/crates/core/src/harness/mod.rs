//! Experiment orchestration: configuration, the seeded run loop, evaluation,
//! CSV output, checkpoints and multi-seed sweeps.

mod buffer;
pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod sweep;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::creps::creps_update;
use crate::envs::{collect_samples, ArmEnv, Environment, QuadraticCostEnv, Task};
use crate::fitting::{fit_nuclear_report, fit_ridge_pca, restrict_to_context_span};
use crate::model::DEFAULT_RANK_TOL;
use crate::rng::{self, RngStreams, StreamRng};
use crate::solver::{cmore_iteration, CmoreState, ModelFitter};
use crate::{
    cross_validate, effective_rank, fit_ridge, kl, pca_fit, ApgConfig, Error, GaussianLinearPolicy,
    PackedModelMatrix, PcaProjection, QuadraticModel, Result, Sample,
};

pub use buffer::ReplayBuffer;
pub use config::{
    AlgorithmConfig, AlgorithmKind, ApgSchedule, CvSchedule, EnvConfig, ExperimentConfig,
    InitConfig, MeanInit, RunConfig,
};

/// One CSV row. Optional cells are empty when the quantity does not apply
/// (for instance `ω` for C-REPS, or every dual column once the policy froze).
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub iteration: usize,
    pub eval_reward_mean: f64,
    pub eval_reward_std: f64,
    pub rank_b: Option<usize>,
    pub eta: Option<f64>,
    pub omega: Option<f64>,
    pub dual_value: Option<f64>,
    pub expected_kl: Option<f64>,
    pub entropy: f64,
    pub hit_rate: Option<f64>,
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub rows: Vec<RunRow>,
    pub initial_policy: GaussianLinearPolicy,
    pub final_policy: GaussianLinearPolicy,
    /// Last fitted surrogate (C-MORE only).
    pub final_model: Option<QuadraticModel>,
    pub final_rank_b: Option<usize>,
    /// Iteration at which the KL stop fired.
    pub converged_at: Option<usize>,
    /// Rollouts whose reward was replaced by the environment floor.
    pub clamped_rewards: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub mean: f64,
    pub std: f64,
    pub hit_rate: Option<f64>,
}

/// Reward of the policy mean on each task, aggregated. The standard
/// deviation is the population one.
pub fn evaluate(policy: &GaussianLinearPolicy, env: &dyn Environment, tasks: &[Task]) -> Result<Evaluation> {
    if tasks.is_empty() {
        return Err(Error::Empty("evaluation tasks"));
    }
    let mut rewards = Vec::with_capacity(tasks.len());
    let mut hits = 0usize;
    let mut has_hits = false;
    for task in tasks {
        let theta = policy.mean_at(&task.context)?;
        let out = env.outcome(&theta, task)?;
        rewards.push(out.reward);
        if let Some(h) = out.hit {
            has_hits = true;
            hits += usize::from(h);
        }
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(Evaluation {
        mean,
        std: var.sqrt(),
        hit_rate: has_hits.then(|| hits as f64 / n),
    })
}

/// Builds the environment for a run. The quadratic task's matrices come from
/// `[env] seed` when given and from the run seed otherwise.
pub fn build_env(cfg: &EnvConfig, run_seed: u64) -> Result<Box<dyn Environment>> {
    Ok(match cfg {
        EnvConfig::Quadratic {
            seed,
            dim_theta,
            dim_context,
            dim_latent,
        } => {
            let s = seed.unwrap_or_else(|| RngStreams::new(run_seed).stream(rng::ENV_BUILD).next_u64());
            Box::new(QuadraticCostEnv::new(s, *dim_theta, *dim_context, *dim_latent)?)
        }
        EnvConfig::Arm(a) => Box::new(ArmEnv::new(a.clone())?),
    })
}

pub fn initial_policy(cfg: &ExperimentConfig, dim_theta: usize, dim_context: usize, rng: &mut (impl Rng + ?Sized)) -> Result<GaussianLinearPolicy> {
    let init = &cfg.init;
    let b = DVector::from_fn(dim_theta, |_, _| match init.mean {
        MeanInit::Uniform { low, high } => rng.random_range(low..high),
        MeanInit::Normal { std } => std * rng.sample::<f64, _>(StandardNormal),
    });
    let k = if init.k_std > 0.0 {
        DMatrix::from_fn(dim_theta, dim_context, |_, _| init.k_std * rng.sample::<f64, _>(StandardNormal))
    } else {
        DMatrix::zeros(dim_theta, dim_context)
    };
    GaussianLinearPolicy::new(b, k, DMatrix::identity(dim_theta, dim_theta) * init.q_scale)
}

/// PCA on contexts drawn from the environment, kept at the largest
/// dimension any fit may ask for.
pub fn pretrain_pca(cfg: &AlgorithmConfig, env: &dyn Environment, rng: &mut dyn RngCore) -> Result<PcaProjection> {
    let dz = cfg.cv.dz_candidates.iter().copied().chain([cfg.dz]).max().unwrap_or(cfg.dz);
    let contexts = (0..cfg.pca_contexts)
        .map(|_| env.sample_context(rng))
        .collect::<Result<Vec<_>>>()?;
    pca_fit(&contexts, dz)
}

/// Surrogate fitter carrying the schedules across updates: cross-validation
/// every `cv.period` updates starting with the first, the decaying APG
/// budget, and the warm start.
pub struct HarnessFitter {
    cfg: AlgorithmConfig,
    pca: Option<PcaProjection>,
    dz: usize,
    lambda_star: f64,
    apg_iters: usize,
    updates: usize,
    warm: Option<PackedModelMatrix>,
    cv_rng: StreamRng,
}

impl HarnessFitter {
    pub fn new(cfg: &AlgorithmConfig, pca: Option<PcaProjection>, cv_rng: StreamRng) -> Self {
        Self {
            dz: cfg.dz,
            lambda_star: cfg.apg.lambda_star,
            apg_iters: cfg.apg_schedule.start,
            updates: 0,
            warm: None,
            pca,
            cv_rng,
            cfg: cfg.clone(),
        }
    }

    pub fn lambda_star(&self) -> f64 {
        self.lambda_star
    }

    pub fn dz(&self) -> usize {
        self.dz
    }

    pub fn apg_iters(&self) -> usize {
        self.apg_iters
    }

    fn apg(&self, lambda_star: f64) -> ApgConfig {
        ApgConfig {
            lambda_star,
            max_iters: self.apg_iters,
            ..self.cfg.apg.clone()
        }
    }

    fn pca_at(&self, dz: usize) -> Result<PcaProjection> {
        let pca = self.pca.as_ref().ok_or(Error::Empty("PCA projection"))?;
        if dz == pca.dim_reduced() {
            Ok(pca.clone())
        } else {
            pca.truncate(dz)
        }
    }

    fn warm_init(&self, samples: &[Sample]) -> Result<PackedModelMatrix> {
        let (dt, dc) = (samples[0].theta.len(), samples[0].context.len());
        match &self.warm {
            Some(h) if self.cfg.warm_start && h.dim() == dt + dc + 1 => restrict_to_context_span(h, samples),
            _ => Ok(PackedModelMatrix::zeros(dt, dc)),
        }
    }

    fn cross_validate_now(&mut self, samples: &[Sample]) -> Result<()> {
        let cv = self.cfg.cv.clone();
        match self.cfg.kind {
            AlgorithmKind::CmoreNuclear if !cv.lambda_star_candidates.is_empty() => {
                let init = self.warm_init(samples)?;
                let mut rng = self.cv_rng.clone();
                let report = cross_validate(samples, &cv.lambda_star_candidates, cv.folds, &mut rng, |train, &ls| {
                    fit_nuclear_report(train, &self.apg(ls), &init).map(|r| r.model)
                })?;
                self.cv_rng = rng;
                self.lambda_star = report.best;
            }
            AlgorithmKind::CmoreRidgePca if !cv.dz_candidates.is_empty() => {
                let mut rng = self.cv_rng.clone();
                let lambda = self.cfg.ridge_lambda;
                let report = cross_validate(samples, &cv.dz_candidates, cv.folds, &mut rng, |train, &dz| {
                    fit_ridge_pca(train, &self.pca_at(dz)?, lambda)
                })?;
                self.cv_rng = rng;
                self.dz = report.best;
            }
            _ => {}
        }
        if self.cfg.apg_schedule.reset_on_cv {
            self.apg_iters = self.cfg.apg_schedule.start;
        }
        Ok(())
    }
}

impl ModelFitter for HarnessFitter {
    fn fit(&mut self, samples: &[Sample]) -> Result<QuadraticModel> {
        if samples.is_empty() {
            return Err(Error::Empty("samples"));
        }
        self.updates += 1;
        let period = self.cfg.cv.period;
        if period > 0 && (self.updates - 1) % period == 0 {
            self.cross_validate_now(samples)?;
        }
        match self.cfg.kind {
            AlgorithmKind::CmoreNuclear => {
                let init = self.warm_init(samples)?;
                let report = fit_nuclear_report(samples, &self.apg(self.lambda_star), &init)?;
                let s = &self.cfg.apg_schedule;
                self.apg_iters = self.apg_iters.saturating_sub(s.decrement).max(s.floor);
                if self.cfg.warm_start {
                    self.warm = Some(report.packed);
                }
                Ok(report.model)
            }
            AlgorithmKind::CmoreRidge => fit_ridge(samples, self.cfg.ridge_lambda),
            AlgorithmKind::CmoreRidgePca => fit_ridge_pca(samples, &self.pca_at(self.dz)?, self.cfg.ridge_lambda),
            AlgorithmKind::CrepsPca => Err(Error::invalid("algorithm", "C-REPS does not fit a surrogate")),
        }
    }
}

/// The fixed evaluation tasks of a run with this seed.
pub fn evaluation_tasks(env: &dyn Environment, n: usize, seed: u64) -> Result<Vec<Task>> {
    let mut rng = RngStreams::new(seed).stream(rng::EVAL);
    (0..n).map(|_| env.sample_task(&mut rng)).collect()
}

pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    run_experiment_with(cfg, seed, |_| Ok(()))
}

/// Runs the configured algorithm for `run.iterations` iterations, handing
/// every row to `sink` as soon as it is complete.
///
/// Once the KL between consecutive policies, averaged over the evaluation
/// contexts, drops below `run.stop_kl` the policy is frozen: later rows repeat the evaluation of
/// the frozen policy with the dual columns left empty.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    seed: u64,
    mut sink: impl FnMut(&RunRow) -> Result<()>,
) -> Result<RunRecord> {
    cfg.validate()?;
    let streams = RngStreams::new(seed);
    let env = build_env(&cfg.env, seed)?;
    let (dt, dc) = (env.dim_theta(), env.dim_context());

    let mut env_rng = streams.stream(rng::ENV);
    let mut policy_rng = streams.stream(rng::POLICY);
    let eval_tasks = evaluation_tasks(env.as_ref(), cfg.run.eval_contexts, seed)?;
    let eval_contexts: Vec<DVector<f64>> = eval_tasks.iter().map(|t| t.context.clone()).collect();

    let kind = cfg.algorithm.kind;
    let pca = if kind.uses_pca() {
        Some(pretrain_pca(&cfg.algorithm, env.as_ref(), &mut streams.stream(rng::PCA))?)
    } else {
        None
    };
    let creps_pca = match &pca {
        Some(p) if kind == AlgorithmKind::CrepsPca && p.dim_reduced() != cfg.algorithm.dz => Some(p.truncate(cfg.algorithm.dz)?),
        other => other.clone(),
    };

    let initial = initial_policy(cfg, dt, dc, &mut streams.stream(rng::INIT))?;
    let mut state = CmoreState {
        policy: initial.clone(),
        buffer: ReplayBuffer::new(cfg.run.window),
    };
    let mut fitter = HarnessFitter::new(&cfg.algorithm, pca, streams.stream(rng::CV));

    let mut rows = Vec::with_capacity(cfg.run.iterations);
    let mut final_model = None;
    let mut final_rank_b = None;
    let mut converged_at = None;
    let mut clamped_rewards = 0;
    let started = Instant::now();

    for k in 1..=cfg.run.iterations {
        let mut step = || -> Result<RunRow> {
            let mut row = RunRow {
                iteration: k,
                eval_reward_mean: 0.0,
                eval_reward_std: 0.0,
                rank_b: None,
                eta: None,
                omega: None,
                dual_value: None,
                expected_kl: None,
                entropy: 0.0,
                hit_rate: None,
                wall_time_s: None,
            };
            if converged_at.is_none() {
                let old = state.policy.clone();
                if kind == AlgorithmKind::CrepsPca {
                    let batch = collect_samples(env.as_ref(), &old, cfg.run.samples_per_iteration, &mut env_rng, &mut policy_rng)?;
                    clamped_rewards += batch.clamped;
                    state.buffer.push(batch.samples);
                    let samples = state.buffer.samples();
                    let up = creps_update(&samples, creps_pca.as_ref(), &cfg.algorithm.creps)?;
                    let contexts: Vec<DVector<f64>> = samples.iter().map(|s| s.context.clone()).collect();
                    row.eta = Some(up.eta);
                    row.dual_value = Some(up.dual_value);
                    row.expected_kl = Some(kl(&up.policy, &old, &contexts)?);
                    state.policy = up.policy;
                } else {
                    let out = cmore_iteration(
                        &mut state,
                        env.as_ref(),
                        &mut fitter,
                        &cfg.algorithm.solver,
                        cfg.run.samples_per_iteration,
                        &mut env_rng,
                        &mut policy_rng,
                    )?;
                    let d = &out.diagnostics;
                    clamped_rewards += d.clamped_rewards;
                    row.rank_b = Some(d.rank_b);
                    row.eta = Some(d.eta);
                    row.omega = Some(d.omega);
                    row.dual_value = Some(d.dual_value);
                    row.expected_kl = Some(d.expected_kl);
                    final_rank_b = Some(d.rank_b);
                    final_model = Some(out.model);
                    state.policy = out.policy;
                }
                if let Some(stop) = cfg.run.stop_kl {
                    if kl(&state.policy, &old, &eval_contexts)? < stop {
                        converged_at = Some(k);
                    }
                }
            }
            let ev = evaluate(&state.policy, env.as_ref(), &eval_tasks)?;
            row.eval_reward_mean = ev.mean;
            row.eval_reward_std = ev.std;
            row.hit_rate = ev.hit_rate;
            row.entropy = state.policy.entropy();
            if cfg.run.record_wall_time {
                row.wall_time_s = Some(started.elapsed().as_secs_f64());
            }
            Ok(row)
        };
        let row = step().map_err(|e| e.at_iteration(k))?;
        sink(&row).map_err(|e| e.at_iteration(k))?;
        rows.push(row);
    }

    Ok(RunRecord {
        seed,
        rows,
        initial_policy: initial,
        final_policy: state.policy,
        final_model,
        final_rank_b,
        converged_at,
        clamped_rewards,
    })
}

/// Rank of the context block under the default tolerance.
pub fn rank_of(model: &QuadraticModel) -> usize {
    effective_rank(model.b(), DEFAULT_RANK_TOL)
}
