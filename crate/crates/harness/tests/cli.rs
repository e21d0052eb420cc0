use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn stno(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stno"))
        .args(args)
        .current_dir(cwd)
        .env_remove("STNO_LOG")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_MC: &str = "kind = \"montecarlo\"\nseed = 1\n[run]\nduration = \"5 ns\"\n[montecarlo]\nreplicas = 4\n";

#[test]
fn validate_accepts_shipped_configs_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        let o = stno(&["validate", "--config", path.to_str().unwrap()], tmp.path());
        assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
        n += 1;
    }
    assert!(n >= 9);
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = stno(&["run", "--config", "missing.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not found"));
    assert!(stderr(&o).contains("Usage"));
    let o = stno(&["run", "--bogus"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_name_key_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "kind = \"single-run\"\n[drive]\ni_dcc = \"200 uA\"\n");
    let o = stno(&["validate", "--config", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("i_dcc") && e.contains("line 3"), "{e}");

    let cfg = write(tmp.path(), "unit.toml", "kind = \"single-run\"\n[drive]\ni_dc = \"200 nm\"\n");
    let e = stderr(&stno(&["validate", "--config", &cfg], tmp.path()));
    assert!(e.contains("drive.i_dc") && e.contains("line 3"), "{e}");
}

#[test]
fn seeded_runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "mc.toml", SMALL_MC);
    let a = stno(&["--quiet", "run", "--config", &cfg, "--seed", "42", "--out", "a"], tmp.path());
    let b = stno(&["--quiet", "run", "--config", &cfg, "--seed", "42", "--out", "b"], tmp.path());
    assert!(a.status.success() && b.status.success(), "{}", stderr(&a));
    for name in ["summary.json", "replicas.csv", "histogram.csv"] {
        let x = fs::read(tmp.path().join("a").join(name)).unwrap();
        let y = fs::read(tmp.path().join("b").join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let summary: Value =
        serde_json::from_slice(&fs::read(tmp.path().join("a/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 42);
    assert_eq!(summary["schema_version"], 1);

    let c = stno(&["run", "--config", &cfg, "--seed", "43", "--out", "c"], tmp.path());
    let line = String::from_utf8_lossy(&c.stdout).into_owned();
    let other: Value =
        serde_json::from_slice(&fs::read(tmp.path().join("c/summary.json")).unwrap()).unwrap();
    assert_ne!(summary["run_id"], other["run_id"]);
    assert!(line.contains("run_id=") && line.contains("status=ok"), "{line}");
}

#[test]
fn default_output_directory_uses_run_id() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "mc.toml", SMALL_MC);
    let o = stno(&["--quiet", "run", "--config", &cfg], tmp.path());
    assert!(o.status.success());
    let runs: Vec<_> = fs::read_dir(tmp.path().join("runs")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(runs.len(), 1);
    let name = runs[0].to_string_lossy().into_owned();
    let summary: Value =
        serde_json::from_slice(&fs::read(tmp.path().join("runs").join(&name).join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(name, format!("montecarlo-{}", summary["run_id"].as_str().unwrap()));
}

#[test]
fn failing_sweep_points_give_partial_status() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sweep.toml",
        "kind = \"freq-vs-bias\"\n[run]\nduration = \"20 ns\"\n\
         [sweep]\naxis = \"i_dc\"\nstart = 0\nstop = \"200 uA\"\npoints = 2\n",
    );
    let o = stno(&["--quiet", "run", "--config", &cfg, "--out", "s"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: Value =
        serde_json::from_slice(&fs::read(tmp.path().join("s/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "partial");
    assert_eq!(summary["failures"].as_array().unwrap().len(), 1);
    let csv = fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    let first = csv.lines().nth(1).unwrap();
    assert!(first.contains("NaN") && first.contains("failed"), "{first}");
}

#[test]
fn informational_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let o = stno(&["list-experiments"], tmp.path());
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(o.status.success());
    assert_eq!(text.lines().count(), 9);
    assert!(text.contains("array-demo"));
    let o = stno(&["version"], tmp.path());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("stno "));
}
