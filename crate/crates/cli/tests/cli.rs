use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cmore(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmore"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const SMALL: &str = "[env]
kind = \"quadratic\"

[algorithm]
kind = \"cmore-ridge\"

[run]
iterations = 2
eval_contexts = 20
";

#[test]
fn run_writes_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), SMALL).unwrap();
    let out = cmore(&["run", "exp.toml", "--out", "r.csv", "--checkpoint-dir", "ckpt"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("iteration,eval_reward_mean"));
    assert!(lines[2].starts_with("2,"));
    let policy = fs::read_to_string(dir.path().join("ckpt/policy.txt")).unwrap();
    cmore::harness::checkpoint::policy_from_str(&policy).unwrap();
    assert!(dir.path().join("ckpt/model.txt").exists());
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), SMALL).unwrap();
    for name in ["a.csv", "b.csv"] {
        assert!(cmore(&["run", "exp.toml", "--seed", "9", "--out", name], dir.path()).status.success());
    }
    assert_eq!(
        fs::read(dir.path().join("a.csv")).unwrap(),
        fs::read(dir.path().join("b.csv")).unwrap()
    );
}

#[test]
fn sweep_writes_a_file_per_seed_and_an_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), format!("{SMALL}seeds = [1, 2, 3]\n")).unwrap();
    let out = cmore(&["sweep", "exp.toml", "--out-dir", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["aggregate.csv", "run_seed1.csv", "run_seed2.csv", "run_seed3.csv"]);
    let agg = fs::read_to_string(dir.path().join("out/aggregate.csv")).unwrap();
    assert_eq!(agg.lines().next().unwrap(), "iteration,seed_1,seed_2,seed_3,mean,std");
    assert_eq!(agg.lines().count(), 3);
}

#[test]
fn missing_env_section_fails_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[algorithm]\nkind = \"cmore-ridge\"\n").unwrap();
    let out = cmore(&["run", "bad.toml"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`env`"), "{err}");
}

#[test]
fn unknown_key_fails_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), format!("{SMALL}learning_rate = 3\n")).unwrap();
    let out = cmore(&["run", "bad.toml"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.learning_rate"));
}

#[test]
fn render_dumps_ppm_images() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmore(
        &["render", "arm", "imgs", "--count", "2", "--width", "16", "--height", "12"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let img = fs::read(dir.path().join("imgs/context_001.ppm")).unwrap();
    assert!(img.starts_with(b"P6\n16 12\n255\n"));
    assert_eq!(img.len(), b"P6\n16 12\n255\n".len() + 16 * 12 * 3);

    let out = cmore(&["render", "cube", "imgs"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = cmore::ExperimentConfig::from_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap();
        n += 1;
    }
    assert!(n >= 3);
}
