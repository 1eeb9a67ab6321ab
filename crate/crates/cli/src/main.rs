use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use cmore::envs::ArmConfig;
use cmore::harness::{checkpoint, sweep, ExperimentConfig};
use cmore::rng::RngStreams;
use cmore::{ArmEnv, Environment, QuadraticCostEnv};

#[derive(Parser)]
#[command(name = "cmore", version, about = "Contextual model-based relative entropy stochastic search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seed of an experiment and write its per-iteration CSV.
    Run {
        config: PathBuf,
        /// Seed to run; defaults to the first seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV; defaults to `run_seed<seed>.csv` in the working directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the final policy and model checkpoints here.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Run every seed of an experiment: one CSV per seed plus an aggregate.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value = "sweep-out")]
        out_dir: PathBuf,
    },
    /// Compare the fast numerical routines against slow reference oracles.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Dump sample contexts of an environment (`arm` or `quadratic`).
    Render {
        env: String,
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Camera width for `arm`.
        #[arg(long)]
        width: Option<usize>,
        /// Camera height for `arm`.
        #[arg(long)]
        height: Option<usize>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            checkpoint_dir,
        } => run(&config, seed, out, checkpoint_dir),
        Command::Sweep { config, out_dir } => {
            let cfg = load(&config)?;
            let result = sweep::sweep(&cfg, &out_dir)?;
            for (rec, path) in result.records.iter().zip(&result.run_files) {
                let last = rec.rows.last().map_or(f64::NAN, |r| r.eval_reward_mean);
                println!("seed {}: final reward {last:.6e} -> {}", rec.seed, path.display());
            }
            println!("aggregate -> {}", result.aggregate_file.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { seed } => {
            let outcomes = cmore::checks::run_all(seed)?;
            for o in &outcomes {
                println!("{o}");
            }
            Ok(if outcomes.iter().all(|o| o.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Render {
            env,
            out_dir,
            count,
            seed,
            width,
            height,
        } => {
            render(&env, &out_dir, count, seed, width, height)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_file(path).with_context(|| format!("loading config {}", path.display()))
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, checkpoint_dir: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = load(config)?;
    cfg.validate()?;
    let seed = seed.unwrap_or(cfg.run.seeds[0]);
    let out = out.unwrap_or_else(|| PathBuf::from(sweep::run_file_name(seed)));
    let rec = sweep::run_to_csv(&cfg, seed, &out).with_context(|| format!("seed {seed}"))?;
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("policy.txt"), checkpoint::policy_to_string(&rec.final_policy))?;
        if let Some(model) = &rec.final_model {
            fs::write(dir.join("model.txt"), checkpoint::model_to_string(model))?;
        }
    }
    let last = rec.rows.last().map_or(f64::NAN, |r| r.eval_reward_mean);
    print!("seed {seed}: {} iterations, final reward {last:.6e}", rec.rows.len());
    if let Some(k) = rec.converged_at {
        print!(", converged at {k}");
    }
    println!(" -> {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn render(
    env: &str,
    out_dir: &Path,
    count: usize,
    seed: u64,
    width: Option<usize>,
    height: Option<usize>,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let streams = RngStreams::new(seed);
    let mut rng = streams.stream(cmore::rng::ENV);
    match env {
        "arm" => {
            let mut cfg = ArmConfig::default();
            cfg.width = width.unwrap_or(cfg.width);
            cfg.height = height.unwrap_or(cfg.height);
            let arm = ArmEnv::new(cfg)?;
            for i in 0..count {
                let ball = arm.sample_ball(&mut rng);
                let img = arm.render(ball, &mut rng)?;
                let path = out_dir.join(format!("context_{i:03}.ppm"));
                fs::write(&path, img.to_ppm())?;
                println!("ball ({:.3}, {:.3}) -> {}", ball[0], ball[1], path.display());
            }
        }
        "quadratic" => {
            if width.is_some() || height.is_some() {
                bail!("--width and --height only apply to `arm`");
            }
            let env = QuadraticCostEnv::standard(seed)?;
            let mut text = String::new();
            for _ in 0..count {
                let c = env.sample_context(&mut rng)?;
                let line: Vec<String> = c.iter().map(|v| format!("{v:e}")).collect();
                text.push_str(&line.join(" "));
                text.push('\n');
            }
            let path = out_dir.join("contexts.txt");
            fs::write(&path, text)?;
            println!("{count} contexts -> {}", path.display());
        }
        other => bail!("unknown env `{other}` (expected `arm` or `quadratic`)"),
    }
    Ok(())
}
