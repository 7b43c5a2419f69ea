use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spacemean_cli::config::RunConfig;

const SMALL: &str = r#"
[grid]
resolution = [11]

[time]
steps = 8

[noise]
paths = 12
seed = 5
intensity = 1.0

[model]
beta = 0.1

[solver]
tolerance = 1e-4
max_iterations = 10

[oracle]
points = 5
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spacemean"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path) -> Output {
    bin().args([cmd, "--config"]).arg(config).arg("--out").arg(out).env_remove(spacemean_cli::OUT_ENV).output().unwrap()
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn validate_on_shipped_default_passes_every_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = run("validate", &shipped("default.toml"), &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("validation.json")).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.len() >= 10);
    assert!(checks.iter().all(|c| c["pass"] == true));
    assert_eq!(report["failed"], 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), checks.len());
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run("simulate", &cfg, &a).status.code(), Some(0));
    assert_eq!(run("simulate", &cfg, &b).status.code(), Some(0));
    for f in ["forward.csv", "summary.json", "config.toml", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("forward.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("path,t,x,Y"));
    // four exported paths, nine time levels, eleven nodes
    assert_eq!(lines.count(), 4 * 9 * 11);
}

#[test]
fn resolution_two_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[grid]\nresolution = [2]\n");
    let o = run("simulate", &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("resolution") && err.contains("minimum of 3"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_keys_and_subcommands_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "typo.toml", "[solver]\nrelaxaton = 0.3\n");
    assert_eq!(run("simulate", &cfg, &dir.path().join("o")).status.code(), Some(1));
    assert_eq!(bin().arg("nonsense").output().unwrap().status.code(), Some(1));
    let missing = dir.path().join("absent.toml");
    assert_eq!(run("simulate", &missing, &dir.path().join("o")).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_two_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    // a negative population leaves the domain of the log utility
    let cfg = write_config(dir.path(), "neg.toml", "[state]\ninitial = -1.0\nboundary = -1.0\n");
    let out = dir.path().join("o");
    let o = run("simulate", &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    let diag: serde_json::Value = serde_json::from_slice(&fs::read(out.join("diagnostic.json")).unwrap()).unwrap();
    assert_eq!(diag["command"], "simulate");
    assert!(diag["error"].as_str().unwrap().contains("rejected"));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn failed_invariant_exits_three_and_is_named() {
    let dir = tempfile::tempdir().unwrap();
    // a coarse finite-difference step separates the derivative forms
    let cfg = write_config(dir.path(), "coarse.toml", "[gradcheck]\ntheta = 0.3\n");
    let out = dir.path().join("o");
    let o = run("validate", &cfg, &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gradient_forms_agree"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("validation.json")).unwrap()).unwrap();
    assert_eq!(report["failed"], 1);
}

#[test]
fn config_echo_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("o");
    assert_eq!(run("adjoint", &cfg, &out).status.code(), Some(0));
    let echo = fs::read_to_string(out.join("config.toml")).unwrap();
    assert_eq!(RunConfig::parse(&echo).unwrap(), RunConfig::parse(SMALL).unwrap());
    // re-running from the echo reproduces the outputs
    let again = dir.path().join("again");
    assert_eq!(run("adjoint", &out.join("config.toml"), &again).status.code(), Some(0));
    assert_eq!(fs::read(out.join("adjoint.csv")).unwrap(), fs::read(again.join("adjoint.csv")).unwrap());
}

#[test]
fn manifest_lists_outputs_with_digests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("o");
    assert_eq!(run("picard", &cfg, &out).status.code(), Some(0));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "picard");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    for entry in m["outputs"].as_array().unwrap() {
        let bytes = fs::read(out.join(entry["file"].as_str().unwrap())).unwrap();
        assert_eq!(entry["sha256"], spacemean_cli::output::hex_digest(&bytes));
    }
    let header = fs::read_to_string(out.join("picard.csv")).unwrap();
    assert!(header.starts_with("n,dp,dq,dr,ratio\n"));
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let from_config = dir.path().join("from-config");
    let text = format!("{SMALL}\n[output]\ndir = \"{}\"\n", from_config.display());
    let cfg = write_config(dir.path(), "c.toml", &text);
    let o = bin().args(["simulate", "--config"]).arg(&cfg).env_remove(spacemean_cli::OUT_ENV).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(from_config.join("manifest.json").exists());

    let from_env = dir.path().join("from-env");
    let o = bin().args(["simulate", "--config"]).arg(&cfg).env(spacemean_cli::OUT_ENV, &from_env).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(from_env.join("manifest.json").exists());

    let from_flag = dir.path().join("from-flag");
    let o = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&from_flag).env(spacemean_cli::OUT_ENV, &from_env).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(from_flag.join("manifest.json").exists());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let one = write_config(dir.path(), "one.toml", &format!("{SMALL}\n[output]\nexport_paths = 12\n").replace("[solver]", "[solver]\nthreads = 1"));
    let four = write_config(dir.path(), "four.toml", &format!("{SMALL}\n[output]\nexport_paths = 12\n").replace("[solver]", "[solver]\nthreads = 4"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run("optimize", &one, &a).status.code(), Some(0));
    assert_eq!(run("optimize", &four, &b).status.code(), Some(0));
    for f in ["control.csv", "report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn optimize_and_oracle_agree_on_the_default_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(run("oracle", &shipped("default.toml"), &out).status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_slice(&fs::read(out.join("oracle.json")).unwrap()).unwrap();
    assert!(r["optimizer_converged"].as_bool().unwrap());
    assert!(r["relative_objective_gap"].as_f64().unwrap() <= 1e-3);
    let gap = (r["optimizer_value"].as_f64().unwrap() - r["best_value"].as_f64().unwrap()).abs();
    assert!(gap <= r["grid_step"].as_f64().unwrap());
    let csv = fs::read_to_string(out.join("oracle.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
}

#[test]
fn two_dimensional_control_export() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[grid]\nlower = [0.0, 0.0]\nupper = [1.0, 1.0]\nresolution = [7, 7]\n[model]\ntheta = 0.3\n[time]\nsteps = 5\n";
    let cfg = write_config(dir.path(), "plane.toml", text);
    let out = dir.path().join("o");
    assert_eq!(run("optimize", &cfg, &out).status.code(), Some(0));
    let csv = fs::read_to_string(out.join("control.csv")).unwrap();
    assert!(csv.starts_with("t,x,y,u\n"));
    assert_eq!(csv.lines().count(), 1 + 5 * 49);
}
