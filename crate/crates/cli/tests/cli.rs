use std::path::Path;
use std::process::{Command, Output};

fn sdenet(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sdenet"));
    cmd.args(args).env_remove("SDENET_OUTPUT_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

const SMALL: &[&str] = &[
    "--set",
    "dataset.n_per_class=40",
    "--set",
    "dataset.test_per_class=40",
    "--set",
    "train.epochs=2",
    "--set",
    "model.test_paths=3",
    "--seeds",
    "0,1",
];

#[test]
fn eval_ood_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["eval-ood", "--output-dir", out];
    args.extend(SMALL);
    let o = sdenet(&args, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("sde_net [epistemic]"));
    for f in ["results.json", "raw_scores.csv", "seed-1/model.json", "seed-0/trainlog.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train"];
    args.extend(SMALL);
    let o = sdenet(&args, &[("SDENET_OUTPUT_DIR", dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("results.json").exists());
}

#[test]
fn config_error_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sdenet(&["train", "--output-dir", out, "--set", "train.bogus=1"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = sdenet(&["eval-ood", "--output-dir", out, "--config", "/no/such/file.toml"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = sdenet(&["visualize", "--output-dir", out, "--set", "dataset.dim=3", "--seeds", "0"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selfcheck_passes() {
    let o = sdenet(&["selfcheck", "--sets", "50"], &[]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("pass")).count(), 6);
}

#[test]
fn shipped_config_loads_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/misclass.toml");
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["eval-misclass", "--config", config, "--output-dir", out, "--sequential"];
    args.extend(SMALL);
    let o = sdenet(&args, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let effective = std::fs::read_to_string(dir.path().join("config.effective.toml")).unwrap();
    assert!(effective.contains("name = \"misclass-two-gaussians\""));
    assert!(effective.contains("parallel = false"));
}
