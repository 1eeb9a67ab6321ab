use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::csv::{fmt_f64, CsvWriter};
use super::{run_experiment_with, ExperimentConfig, RunRecord};
use crate::{Error, Result};

pub fn run_file_name(seed: u64) -> String {
    format!("run_seed{seed}.csv")
}

pub const AGGREGATE_FILE: &str = "aggregate.csv";

#[derive(Debug)]
pub struct SweepOutput {
    pub records: Vec<RunRecord>,
    pub run_files: Vec<PathBuf>,
    pub aggregate_file: PathBuf,
}

/// Runs one seed, streaming rows to a CSV file at `path`.
pub fn run_to_csv(cfg: &ExperimentConfig, seed: u64, path: &Path) -> Result<RunRecord> {
    let mut w = CsvWriter::new(BufWriter::new(File::create(path)?))?;
    let rec = run_experiment_with(cfg, seed, |row| w.write_row(row))?;
    w.finish()?;
    Ok(rec)
}

/// Per-iteration mean reward of every seed followed by their mean and
/// population standard deviation.
pub fn aggregate_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("iteration");
    for r in records {
        s.push_str(&format!(",seed_{}", r.seed));
    }
    s.push_str(",mean,std\n");
    let n = records.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    for i in 0..n {
        let vals: Vec<f64> = records.iter().map(|r| r.rows[i].eval_reward_mean).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        s.push_str(&(i + 1).to_string());
        for v in &vals {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push_str(&format!(",{},{}\n", fmt_f64(m), fmt_f64(sd)));
    }
    s
}

/// One CSV per seed plus the aggregate, seeds running in parallel.
pub fn sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SweepOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let seeds = &cfg.run.seeds;
    let mut distinct = seeds.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != seeds.len() {
        return Err(Error::Config {
            key: "run.seeds".into(),
            reason: "seeds must be distinct".into(),
        });
    }
    let results: Vec<(RunRecord, PathBuf)> = seeds
        .par_iter()
        .map(|&seed| {
            let path = out_dir.join(run_file_name(seed));
            run_to_csv(cfg, seed, &path).map(|r| (r, path))
        })
        .collect::<Result<_>>()?;
    let (records, run_files): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let aggregate_file = out_dir.join(AGGREGATE_FILE);
    std::fs::write(&aggregate_file, aggregate_csv(&records))?;
    Ok(SweepOutput {
        records,
        run_files,
        aggregate_file,
    })
}
