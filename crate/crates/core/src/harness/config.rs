//! Experiment configuration: typed structs, per-environment presets, and a
//! sectioned `key = value` file format (a TOML subset).
//!
//! ```text
//! [env]
//! kind = "quadratic"
//!
//! [algorithm]
//! kind = "cmore-nuclear"
//! lambda_star = 2e-5
//!
//! [run]
//! seeds = [1, 2, 3]
//! iterations = 100
//! ```
//!
//! `[env]` and `[algorithm]` are required and must name a `kind`; every other
//! key falls back to the preset for that environment and algorithm. Unknown
//! sections and keys are rejected with the offending `section.key`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use toml::{Table, Value};

use crate::envs::ArmConfig;
use crate::{ApgConfig, CrepsConfig, Error, Result, SolverConfig, StepRule, SvtThreshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlgorithmKind {
    CmoreNuclear,
    CmoreRidge,
    CmoreRidgePca,
    CrepsPca,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 4] = [
        AlgorithmKind::CmoreNuclear,
        AlgorithmKind::CmoreRidge,
        AlgorithmKind::CmoreRidgePca,
        AlgorithmKind::CrepsPca,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmKind::CmoreNuclear => "cmore-nuclear",
            AlgorithmKind::CmoreRidge => "cmore-ridge",
            AlgorithmKind::CmoreRidgePca => "cmore-ridge-pca",
            AlgorithmKind::CrepsPca => "creps-pca",
        }
    }

    pub fn uses_pca(self) -> bool {
        matches!(self, AlgorithmKind::CmoreRidgePca | AlgorithmKind::CrepsPca)
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config {
                key: "algorithm.kind".into(),
                reason: format!(
                    "unknown algorithm `{s}` (expected one of cmore-nuclear, cmore-ridge, cmore-ridge-pca, creps-pca)"
                ),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    Quadratic {
        /// Seed for `T1`, `T2`; derived from the run seed when absent.
        seed: Option<u64>,
        dim_theta: usize,
        dim_context: usize,
        dim_latent: usize,
    },
    Arm(ArmConfig),
}

impl EnvConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvConfig::Quadratic { .. } => "quadratic",
            EnvConfig::Arm(_) => "arm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApgSchedule {
    /// Iteration budget `K` for the first fit.
    pub start: usize,
    /// Subtracted from `K` after every fit.
    pub decrement: usize,
    pub floor: usize,
    /// Restore `K = start` whenever cross-validation runs.
    pub reset_on_cv: bool,
}

impl ApgSchedule {
    pub fn constant(k: usize) -> Self {
        Self {
            start: k,
            decrement: 0,
            floor: k,
            reset_on_cv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSchedule {
    /// Cross-validate on update 1 and every `period` updates after; 0 disables.
    pub period: usize,
    pub folds: usize,
    pub lambda_star_candidates: Vec<f64>,
    pub dz_candidates: Vec<usize>,
}

impl CvSchedule {
    pub fn disabled() -> Self {
        Self {
            period: 0,
            folds: 5,
            lambda_star_candidates: Vec::new(),
            dz_candidates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    pub solver: SolverConfig,
    pub apg: ApgConfig,
    pub apg_schedule: ApgSchedule,
    /// Start each APG run from the previous fit instead of zeros.
    pub warm_start: bool,
    /// Ridge weight for the ridge fitters.
    pub ridge_lambda: f64,
    /// PCA dimension used until cross-validation picks one.
    pub dz: usize,
    /// Contexts drawn from the environment to pretrain PCA.
    pub pca_contexts: usize,
    pub cv: CvSchedule,
    pub creps: CrepsConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeanInit {
    Uniform { low: f64, high: f64 },
    Normal { std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub mean: MeanInit,
    /// Standard deviation of the initial gain entries (0 gives `K = 0`).
    pub k_std: f64,
    /// Initial covariance `q_scale · I`.
    pub q_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub samples_per_iteration: usize,
    /// Iterations of samples kept for fitting.
    pub window: usize,
    pub eval_contexts: usize,
    /// Freeze the policy once `KL(π_new ‖ π_old)` over the evaluation
    /// contexts drops below this.
    pub stop_kl: Option<f64>,
    /// Fill the `wall_time_s` column (makes output non-reproducible).
    pub record_wall_time: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub algorithm: AlgorithmConfig,
    pub run: RunConfig,
    pub init: InitConfig,
}

impl ExperimentConfig {
    /// Quadratic-cost benchmark: `dθ = 10`, `dc = 25`, `dc̃ = 3`, 35 samples
    /// per iteration, a 20-iteration window, `ε = 0.9`, `Q₀ = 10⁴ I`.
    pub fn quadratic_default(kind: AlgorithmKind) -> Self {
        let apg = ApgConfig {
            lambda: 1e-5,
            lambda_star: 2e-5,
            step: 1e-3,
            grad_normalize: true,
            max_iters: 1000,
            step_rule: StepRule::Lipschitz,
            precondition: true,
            ..ApgConfig::default()
        };
        Self {
            env: EnvConfig::Quadratic {
                seed: None,
                dim_theta: 10,
                dim_context: 25,
                dim_latent: 3,
            },
            algorithm: AlgorithmConfig {
                kind,
                solver: SolverConfig::default(),
                apg,
                apg_schedule: ApgSchedule::constant(1000),
                warm_start: true,
                ridge_lambda: 1e-6,
                dz: if kind == AlgorithmKind::CrepsPca { 10 } else { 20 },
                pca_contexts: 10_000,
                cv: CvSchedule::disabled(),
                creps: CrepsConfig::default(),
            },
            run: RunConfig {
                seeds: vec![1],
                iterations: 100,
                samples_per_iteration: 35,
                window: 20,
                eval_contexts: 1000,
                stop_kl: Some(0.1),
                record_wall_time: false,
            },
            init: InitConfig {
                mean: MeanInit::Uniform { low: 0.0, high: 5.0 },
                k_std: 0.0,
                q_scale: 1e4,
            },
        }
    }

    /// Two-link arm benchmark with the 32×24 camera, 50 samples per
    /// iteration, a 4-iteration window and cross-validated `λ*` and `dz`.
    pub fn arm_default(kind: AlgorithmKind) -> Self {
        let apg = ApgConfig {
            lambda: 1e-4,
            lambda_star: 1e-1,
            step: 1e-3,
            grad_normalize: true,
            max_iters: 50,
            step_rule: StepRule::Lipschitz,
            precondition: true,
            ..ApgConfig::default()
        };
        Self {
            env: EnvConfig::Arm(ArmConfig::default()),
            algorithm: AlgorithmConfig {
                kind,
                solver: SolverConfig::default(),
                apg,
                apg_schedule: ApgSchedule::constant(50),
                warm_start: true,
                ridge_lambda: 1e-4,
                dz: if kind == AlgorithmKind::CrepsPca { 10 } else { 20 },
                pca_contexts: 2000,
                cv: CvSchedule {
                    period: 100,
                    folds: 5,
                    lambda_star_candidates: vec![1e-1, 3e-1, 1.0],
                    dz_candidates: vec![10, 20, 30, 40],
                },
                creps: CrepsConfig::default(),
            },
            run: RunConfig {
                seeds: vec![1],
                iterations: 1000,
                samples_per_iteration: 50,
                window: 4,
                eval_contexts: 500,
                stop_kl: None,
                record_wall_time: false,
            },
            init: InitConfig {
                mean: MeanInit::Normal { std: 1.0 },
                k_std: 0.01,
                q_scale: 1.0,
            },
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        let r = &self.run;
        if r.seeds.is_empty() {
            return bad("run.seeds", "at least one seed is required");
        }
        for (key, v) in [
            ("run.iterations", r.iterations),
            ("run.samples", r.samples_per_iteration),
            ("run.window", r.window),
            ("run.eval_contexts", r.eval_contexts),
        ] {
            if v == 0 {
                return bad(key, "must be >= 1");
            }
        }
        let a = &self.algorithm;
        a.solver.validate().map_err(|e| Error::Config {
            key: "algorithm".into(),
            reason: e.to_string(),
        })?;
        a.apg.validate().map_err(|e| Error::Config {
            key: "algorithm".into(),
            reason: e.to_string(),
        })?;
        a.creps.validate().map_err(|e| Error::Config {
            key: "algorithm".into(),
            reason: e.to_string(),
        })?;
        if a.apg_schedule.start == 0 || a.apg_schedule.floor == 0 {
            return bad("algorithm.apg_iters", "APG budgets must be >= 1");
        }
        if a.cv.period > 0 {
            if a.cv.folds < 2 {
                return bad("algorithm.cv_folds", "must be >= 2");
            }
            let needs = match a.kind {
                AlgorithmKind::CmoreNuclear => Some(("algorithm.lambda_star_candidates", a.cv.lambda_star_candidates.is_empty())),
                AlgorithmKind::CmoreRidgePca => Some(("algorithm.dz_candidates", a.cv.dz_candidates.is_empty())),
                _ => None,
            };
            if let Some((key, true)) = needs {
                return bad(key, "cross-validation is enabled but the candidate list is empty");
            }
        }
        if a.kind.uses_pca() {
            let dc = match &self.env {
                EnvConfig::Quadratic { dim_context, .. } => *dim_context,
                EnvConfig::Arm(c) => c.width * c.height * 3,
            };
            let max_dz = a.cv.dz_candidates.iter().copied().chain([a.dz]).max().unwrap_or(a.dz);
            if a.dz == 0 || max_dz >= dc {
                return bad("algorithm.dz", "must satisfy 0 < dz < context dimension");
            }
            if a.pca_contexts <= max_dz {
                return bad("algorithm.pca_contexts", "must exceed the largest dz");
            }
        }
        if !(self.init.q_scale > 0.0) {
            return bad("init.q_scale", "must be > 0");
        }
        Ok(())
    }
}

const ENV_QUADRATIC_KEYS: &[&str] = &["kind", "seed", "dim_theta", "dim_context", "dim_latent"];
const ENV_ARM_KEYS: &[&str] = &[
    "kind",
    "width",
    "height",
    "noise",
    "texture_seed",
    "ball_radius",
    "horizon",
    "dt",
    "bandwidth",
    "hit_radius",
    "reward_floor",
    "acceleration_cost",
];
const ALGORITHM_KEYS: &[&str] = &[
    "kind",
    "epsilon",
    "gamma",
    "h0",
    "dual_max_evals",
    "lambda",
    "lambda_star",
    "step",
    "grad_normalize",
    "threshold",
    "step_rule",
    "precondition",
    "stop_rel_tol",
    "nsd_floor",
    "apg_iters",
    "apg_decrement",
    "apg_floor",
    "apg_reset_on_cv",
    "warm_start",
    "ridge_lambda",
    "dz",
    "pca_contexts",
    "cv_period",
    "cv_folds",
    "lambda_star_candidates",
    "dz_candidates",
    "creps_ridge",
    "creps_jitter",
    "creps_min_ess",
];
const RUN_KEYS: &[&str] = &[
    "seed",
    "seeds",
    "iterations",
    "samples",
    "window",
    "eval_contexts",
    "stop_kl",
    "record_wall_time",
];
const INIT_KEYS: &[&str] = &["mean", "low", "high", "std", "k_std", "q_scale"];

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
            key: "<file>".into(),
            reason: e.to_string().trim().to_string(),
        })?;
        for name in table.keys() {
            if !["env", "algorithm", "run", "init"].contains(&name.as_str()) {
                return Err(Error::Config {
                    key: name.clone(),
                    reason: "unknown section".into(),
                });
            }
        }
        let env = Section::required(&table, "env")?;
        let alg = Section::required(&table, "algorithm")?;
        let run = Section::optional(&table, "run")?;
        let init = Section::optional(&table, "init")?;

        let kind: AlgorithmKind = alg.string("kind")?.ok_or_else(|| missing("algorithm.kind"))?.parse()?;
        let env_kind = env.string("kind")?.ok_or_else(|| missing("env.kind"))?;
        let mut cfg = match env_kind.as_str() {
            "quadratic" => {
                env.check_keys(ENV_QUADRATIC_KEYS)?;
                ExperimentConfig::quadratic_default(kind)
            }
            "arm" => {
                env.check_keys(ENV_ARM_KEYS)?;
                ExperimentConfig::arm_default(kind)
            }
            other => {
                return Err(Error::Config {
                    key: "env.kind".into(),
                    reason: format!("unknown environment `{other}` (expected quadratic or arm)"),
                })
            }
        };
        alg.check_keys(ALGORITHM_KEYS)?;
        run.check_keys(RUN_KEYS)?;
        init.check_keys(INIT_KEYS)?;

        match &mut cfg.env {
            EnvConfig::Quadratic {
                seed,
                dim_theta,
                dim_context,
                dim_latent,
            } => {
                if let Some(s) = env.uint("seed")? {
                    *seed = Some(s);
                }
                env.set_usize("dim_theta", dim_theta)?;
                env.set_usize("dim_context", dim_context)?;
                env.set_usize("dim_latent", dim_latent)?;
            }
            EnvConfig::Arm(a) => {
                env.set_usize("width", &mut a.width)?;
                env.set_usize("height", &mut a.height)?;
                env.set_f64("noise", &mut a.noise)?;
                if let Some(s) = env.uint("texture_seed")? {
                    a.texture_seed = s;
                }
                env.set_f64("ball_radius", &mut a.ball_radius)?;
                env.set_usize("horizon", &mut a.horizon)?;
                env.set_f64("dt", &mut a.dt)?;
                env.set_f64("bandwidth", &mut a.bandwidth)?;
                env.set_f64("hit_radius", &mut a.hit_radius)?;
                env.set_f64("reward_floor", &mut a.reward_floor)?;
                env.set_f64("acceleration_cost", &mut a.acceleration_cost)?;
            }
        }

        let a = &mut cfg.algorithm;
        alg.set_f64("epsilon", &mut a.solver.epsilon)?;
        a.creps.epsilon = a.solver.epsilon;
        alg.set_f64("gamma", &mut a.solver.gamma)?;
        alg.set_f64("h0", &mut a.solver.h0)?;
        alg.set_usize("dual_max_evals", &mut a.solver.max_evals)?;
        alg.set_f64("lambda", &mut a.apg.lambda)?;
        alg.set_f64("lambda_star", &mut a.apg.lambda_star)?;
        alg.set_f64("step", &mut a.apg.step)?;
        alg.set_bool("grad_normalize", &mut a.apg.grad_normalize)?;
        if let Some(t) = alg.string("threshold")? {
            a.apg.threshold = match t.as_str() {
                "scaled" => SvtThreshold::Scaled,
                "raw" => SvtThreshold::Raw,
                other => {
                    return Err(Error::Config {
                        key: "algorithm.threshold".into(),
                        reason: format!("expected `scaled` or `raw`, got `{other}`"),
                    })
                }
            };
        }
        if let Some(t) = alg.string("step_rule")? {
            a.apg.step_rule = match t.as_str() {
                "fixed" => StepRule::Fixed,
                "lipschitz" => StepRule::Lipschitz,
                other => {
                    return Err(Error::Config {
                        key: "algorithm.step_rule".into(),
                        reason: format!("expected `fixed` or `lipschitz`, got `{other}`"),
                    })
                }
            };
        }
        alg.set_bool("precondition", &mut a.apg.precondition)?;
        alg.set_f64("stop_rel_tol", &mut a.apg.stop_rel_tol)?;
        alg.set_f64("nsd_floor", &mut a.apg.nsd_floor)?;
        if let Some(k) = alg.usize("apg_iters")? {
            a.apg_schedule.start = k;
            if alg.get("apg_floor").is_none() {
                a.apg_schedule.floor = a.apg_schedule.floor.min(k);
            }
        }
        alg.set_usize("apg_decrement", &mut a.apg_schedule.decrement)?;
        alg.set_usize("apg_floor", &mut a.apg_schedule.floor)?;
        alg.set_bool("apg_reset_on_cv", &mut a.apg_schedule.reset_on_cv)?;
        a.apg.max_iters = a.apg_schedule.start;
        alg.set_bool("warm_start", &mut a.warm_start)?;
        alg.set_f64("ridge_lambda", &mut a.ridge_lambda)?;
        alg.set_usize("dz", &mut a.dz)?;
        alg.set_usize("pca_contexts", &mut a.pca_contexts)?;
        alg.set_usize("cv_period", &mut a.cv.period)?;
        alg.set_usize("cv_folds", &mut a.cv.folds)?;
        if let Some(v) = alg.f64_list("lambda_star_candidates")? {
            a.cv.lambda_star_candidates = v;
        }
        if let Some(v) = alg.usize_list("dz_candidates")? {
            a.cv.dz_candidates = v;
        }
        alg.set_f64("creps_ridge", &mut a.creps.ridge)?;
        alg.set_f64("creps_jitter", &mut a.creps.jitter)?;
        alg.set_f64("creps_min_ess", &mut a.creps.min_ess)?;

        let r = &mut cfg.run;
        match (run.uint("seed")?, run.get("seeds")) {
            (Some(_), Some(_)) => {
                return Err(Error::Config {
                    key: "run.seeds".into(),
                    reason: "give either `seed` or `seeds`, not both".into(),
                })
            }
            (Some(s), None) => r.seeds = vec![s],
            (None, Some(_)) => r.seeds = run.u64_list("seeds")?.unwrap_or_default(),
            (None, None) => {}
        }
        run.set_usize("iterations", &mut r.iterations)?;
        run.set_usize("samples", &mut r.samples_per_iteration)?;
        run.set_usize("window", &mut r.window)?;
        run.set_usize("eval_contexts", &mut r.eval_contexts)?;
        if let Some(v) = run.f64("stop_kl")? {
            r.stop_kl = (v > 0.0).then_some(v);
        }
        run.set_bool("record_wall_time", &mut r.record_wall_time)?;

        let i = &mut cfg.init;
        if let Some(m) = init.string("mean")? {
            i.mean = match m.as_str() {
                "uniform" => MeanInit::Uniform { low: 0.0, high: 1.0 },
                "normal" => MeanInit::Normal { std: 1.0 },
                other => {
                    return Err(Error::Config {
                        key: "init.mean".into(),
                        reason: format!("expected `uniform` or `normal`, got `{other}`"),
                    })
                }
            };
        }
        match &mut i.mean {
            MeanInit::Uniform { low, high } => {
                init.set_f64("low", low)?;
                init.set_f64("high", high)?;
                if init.get("std").is_some() {
                    return Err(init.error("std", "only valid with mean = \"normal\""));
                }
                if !(low < high) {
                    return Err(init.error("high", "must exceed `low`"));
                }
            }
            MeanInit::Normal { std } => {
                init.set_f64("std", std)?;
                for k in ["low", "high"] {
                    if init.get(k).is_some() {
                        return Err(init.error(k, "only valid with mean = \"uniform\""));
                    }
                }
            }
        }
        init.set_f64("k_std", &mut i.k_std)?;
        init.set_f64("q_scale", &mut i.q_scale)?;

        cfg.validate()?;
        Ok(cfg)
    }
}

fn missing(key: &str) -> Error {
    Error::Config {
        key: key.into(),
        reason: "required key is missing".into(),
    }
}

struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Section<'a> {
    fn required(root: &'a Table, name: &'static str) -> Result<Self> {
        let s = Self::optional(root, name)?;
        if s.table.is_none() {
            return Err(Error::Config {
                key: name.into(),
                reason: "required section is missing".into(),
            });
        }
        Ok(s)
    }

    fn optional(root: &'a Table, name: &'static str) -> Result<Self> {
        match root.get(name) {
            None => Ok(Self { name, table: None }),
            Some(Value::Table(t)) => Ok(Self { name, table: Some(t) }),
            Some(_) => Err(Error::Config {
                key: name.into(),
                reason: "expected a [section]".into(),
            }),
        }
    }

    fn error(&self, key: &str, reason: impl Into<String>) -> Error {
        Error::Config {
            key: format!("{}.{key}", self.name),
            reason: reason.into(),
        }
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !allowed.contains(&k.as_str()) {
                    return Err(self.error(k, "unknown key"));
                }
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(self.error(key, "expected a number")),
        }
    }

    fn uint(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
            Some(_) => Err(self.error(key, "expected a non-negative integer")),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.uint(key)?.map(|v| v as usize))
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(self.error(key, "expected true or false")),
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.error(key, "expected a quoted string")),
        }
    }

    fn list<T>(&self, key: &str, item: impl Fn(&Value) -> Option<T>, what: &str) -> Result<Option<Vec<T>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| item(v).ok_or_else(|| self.error(key, format!("expected a list of {what}"))))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(self.error(key, format!("expected a list of {what}"))),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.list(
            key,
            |v| match v {
                Value::Float(f) => Some(*f),
                Value::Integer(i) => Some(*i as f64),
                _ => None,
            },
            "numbers",
        )
    }

    fn u64_list(&self, key: &str) -> Result<Option<Vec<u64>>> {
        self.list(
            key,
            |v| match v {
                Value::Integer(i) if *i >= 0 => Some(*i as u64),
                _ => None,
            },
            "non-negative integers",
        )
    }

    fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        Ok(self.u64_list(key)?.map(|v| v.into_iter().map(|x| x as usize).collect()))
    }

    fn set_f64(&self, key: &str, slot: &mut f64) -> Result<()> {
        if let Some(v) = self.f64(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_usize(&self, key: &str, slot: &mut usize) -> Result<()> {
        if let Some(v) = self.usize(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_bool(&self, key: &str, slot: &mut bool) -> Result<()> {
        if let Some(v) = self.bool(key)? {
            *slot = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ExperimentConfig> {
        s.parse()
    }

    fn key_of(e: Error) -> String {
        match e {
            Error::Config { key, .. } => key,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn quadratic_defaults() {
        let c = parse("[env]\nkind = \"quadratic\"\n[algorithm]\nkind = \"cmore-nuclear\"\n").unwrap();
        assert_eq!(c, ExperimentConfig::quadratic_default(AlgorithmKind::CmoreNuclear));
        assert_eq!(c.run.samples_per_iteration, 35);
        assert_eq!(c.run.window, 20);
        assert_eq!(c.run.eval_contexts, 1000);
        assert_eq!(c.algorithm.solver.epsilon, 0.9);
    }

    #[test]
    fn overrides_apply() {
        let c = parse(
            "[env]\nkind = \"arm\"\nwidth = 16\nheight = 12\n\
             [algorithm]\nkind = \"cmore-ridge-pca\"\nepsilon = 0.5\ndz_candidates = [10, 20]\n\
             [run]\nseeds = [4, 5]\niterations = 3\nstop_kl = 0.2\n\
             [init]\nmean = \"uniform\"\nlow = -1\nhigh = 1\n",
        )
        .unwrap();
        match &c.env {
            EnvConfig::Arm(a) => assert_eq!((a.width, a.height), (16, 12)),
            _ => panic!(),
        }
        assert_eq!(c.algorithm.solver.epsilon, 0.5);
        assert_eq!(c.algorithm.creps.epsilon, 0.5);
        assert_eq!(c.algorithm.cv.dz_candidates, vec![10, 20]);
        assert_eq!(c.run.seeds, vec![4, 5]);
        assert_eq!(c.run.stop_kl, Some(0.2));
        assert_eq!(c.init.mean, MeanInit::Uniform { low: -1.0, high: 1.0 });
    }

    #[test]
    fn errors_name_the_key() {
        let base = "[env]\nkind = \"quadratic\"\n[algorithm]\nkind = \"cmore-ridge\"\n";
        assert_eq!(key_of(parse("[algorithm]\nkind = \"cmore-ridge\"\n").unwrap_err()), "env");
        assert_eq!(key_of(parse("[env]\nkind = \"quadratic\"\n").unwrap_err()), "algorithm");
        assert_eq!(key_of(parse(&format!("{base}[run]\nbogus = 1\n")).unwrap_err()), "run.bogus");
        assert_eq!(key_of(parse(&format!("{base}[extra]\nx = 1\n")).unwrap_err()), "extra");
        assert_eq!(key_of(parse(&format!("{base}[run]\niterations = \"x\"\n")).unwrap_err()), "run.iterations");
        assert_eq!(key_of(parse(&format!("{base}[run]\niterations = 0\n")).unwrap_err()), "run.iterations");
        assert_eq!(
            key_of(parse("[env]\nkind = \"quadratic\"\nwidth = 3\n[algorithm]\nkind = \"cmore-ridge\"\n").unwrap_err()),
            "env.width"
        );
        assert_eq!(
            key_of(parse("[env]\nkind = \"quadratic\"\n[algorithm]\nkind = \"magic\"\n").unwrap_err()),
            "algorithm.kind"
        );
    }
}
