use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use svoflow::policy::{Architecture, WeightBundle};
use svoflow::rollout::{read_logs, write_logs};

fn svoflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svoflow"))
        .args(args)
        .current_dir(dir)
        .env_remove("SVOFLOW_OUT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const IDM_CONFIG: &str = r#"
scenario = "merge"
output_dir = "out"
repeats = 2
master_seed = 3
log_detail = "full"

[cases]
count = 3
seed = 11

[flow]
policy = "idm"
comm_mode = "fully_visible"
"#;

#[test]
fn gen_cases_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        let o = svoflow(dir.path(), &["gen-cases", "--scenario", "intersection", "--n", "20", "--seed", "7", "--out", name]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    assert!(dir.path().join("a.manifest.json").exists());
    let file = svoflow::scenario::load_cases(&dir.path().join("a.json")).unwrap();
    assert_eq!(file.cases.len(), 20);
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_svoflow"))
        .args(["gen-cases", "--scenario", "merge", "--n", "2", "--seed", "1"])
        .current_dir(dir.path())
        .env("SVOFLOW_OUT", "envout")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("envout/cases-merge-n2-seed1.json").exists());
}

#[test]
fn rollout_writes_artifacts_and_is_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", IDM_CONFIG);
    let one = svoflow(dir.path(), &["rollout", "--config", "run.toml", "--workers", "1", "--out", "w1"]);
    assert_eq!(one.status.code(), Some(0), "{}", stderr(&one));
    let table = stdout(&one);
    for col in ["Off Road", "Off Route", "Wrong Lane"] {
        assert!(table.contains(col), "{table}");
    }
    let row = table.lines().find(|l| l.starts_with("idm")).unwrap();
    let cells: Vec<&str> = row.split("  ").map(str::trim).filter(|c| !c.is_empty()).collect();
    assert_eq!(&cells[3..6], &["0.0 ± 0.0", "0.0 ± 0.0", "0.0 ± 0.0"], "{row}");

    let three = svoflow(dir.path(), &["rollout", "--config", "run.toml", "--workers", "3", "--out", "w3"]);
    assert_eq!(three.status.code(), Some(0), "{}", stderr(&three));
    for f in ["metrics.csv", "cases.json"] {
        let a = std::fs::read(dir.path().join("w1").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("w3").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    // logs agree except for the measured wall time
    let strip = |d: &str| {
        let mut logs = read_logs(&dir.path().join(d).join("logs.jsonl.gz")).unwrap();
        logs.iter_mut().for_each(|l| l.wall_time_s = 0.0);
        logs
    };
    assert_eq!(strip("w1"), strip("w3"));
    let m1: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("w1/manifest.json")).unwrap()).unwrap();
    let m3: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("w3/manifest.json")).unwrap()).unwrap();
    assert_eq!(m1["config_sha256"], m3["config_sha256"]);
    assert_eq!(m1["seeds"], m3["seeds"]);
    assert_eq!(m1["seeds"].as_array().unwrap().len(), 6);
    assert_eq!(m1["engine_version"], env!("CARGO_PKG_VERSION"));
    assert!(m1["files"]["logs.jsonl.gz"].is_string());

    // replay of the written log is exact
    let r = svoflow(dir.path(), &["replay", "--log", "w1/logs.jsonl.gz"]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    assert_eq!(stdout(&r).matches("exact").count(), 6);

    let d = svoflow(dir.path(), &["replay", "--log", "w1/logs.jsonl.gz", "--dump-step", "4", "--dump-out", "dump.jsonl"]);
    assert_eq!(d.status.code(), Some(0), "{}", stderr(&d));
    let dump = std::fs::read_to_string(dir.path().join("dump.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(dump.lines().next().unwrap()).unwrap();
    assert_eq!(first["step_count"], 4);
}

#[test]
fn tampered_and_summary_logs_fail_replay() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", IDM_CONFIG);
    let o = svoflow(dir.path(), &["rollout", "--config", "run.toml", "--workers", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut logs = read_logs(&dir.path().join("out/logs.jsonl.gz")).unwrap();
    logs[0].steps[2].agents[0].speed += 1e-9;
    write_logs(&dir.path().join("tampered.jsonl"), &logs).unwrap();
    let r = svoflow(dir.path(), &["replay", "--log", "tampered.jsonl"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stdout(&r).contains("diverged"), "{}", stdout(&r));

    let s = svoflow(dir.path(), &["rollout", "--config", "run.toml", "--log-detail", "summary", "--out", "short"]);
    assert_eq!(s.status.code(), Some(0), "{}", stderr(&s));
    let r = svoflow(dir.path(), &["replay", "--log", "short/logs.jsonl.gz"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", IDM_CONFIG);
    let o = svoflow(dir.path(), &["rollout", "--config", "run.toml", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));

    let o = svoflow(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));

    write(dir.path(), "unknown.toml", &format!("{IDM_CONFIG}\n[extra]\nkey = 1\n"));
    let o = svoflow(dir.path(), &["rollout", "--config", "unknown.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("extra"), "{}", stderr(&o));

    write(dir.path(), "dt.toml", &format!("{IDM_CONFIG}\n[episode]\ndt = -0.1\n"));
    let o = svoflow(dir.path(), &["rollout", "--config", "dt.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("episode.dt"), "{}", stderr(&o));

    let o = svoflow(dir.path(), &["rollout", "--config", "run.toml", "--comm-mode", "telepathy"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("flow.comm_mode"), "{}", stderr(&o));

    let o = svoflow(dir.path(), &["rollout", "--config", "run.toml", "--workers", "0"]);
    assert_eq!(o.status.code(), Some(1));

    let o = svoflow(dir.path(), &["rollout", "--config", "missing.toml"]);
    assert_eq!(o.status.code(), Some(1));

    let o = svoflow(dir.path(), &["gen-cases", "--scenario", "atlantis", "--n", "2", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--scenario"), "{}", stderr(&o));

    let o = svoflow(dir.path(), &["evaluate", "--config", "run.toml", "--flows", "idm"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ego.weights"), "{}", stderr(&o));

    let o = svoflow(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "garbage.jsonl", "{not json}\n");
    let o = svoflow(dir.path(), &["replay", "--log", "garbage.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    let o = svoflow(dir.path(), &["replay", "--log", "absent.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_builds_a_grid_over_flows() {
    let dir = tempfile::tempdir().unwrap();
    WeightBundle::seeded(&Architecture::lower_level(), 1).save(&dir.path().join("ego.svow")).unwrap();
    WeightBundle::seeded(&Architecture::lower_level(), 2).save(&dir.path().join("flow.svow")).unwrap();
    WeightBundle::seeded(&Architecture::adversary(), 3).save(&dir.path().join("adv.svow")).unwrap();
    write(dir.path(), "eval.toml", &IDM_CONFIG.replace("log_detail = \"full\"", "log_detail = \"summary\""));
    let o = svoflow(
        dir.path(),
        &["evaluate", "--config", "eval.toml", "--ego-weights", "ego.svow", "--flows", "idm,learned=neural:flow.svow", "--workers", "1"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.lines().any(|l| l.starts_with("idm")), "{table}");
    assert!(table.lines().any(|l| l.starts_with("learned")), "{table}");
    for f in ["logs-idm.jsonl.gz", "logs-learned.jsonl.gz", "metrics.csv", "manifest.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let logs = read_logs(&dir.path().join("out/logs-idm.jsonl.gz")).unwrap();
    assert!(logs.iter().all(|l| l.summary[0].is_ego));

    // adversarial communication needs adversary weights
    let o = svoflow(
        dir.path(),
        &["evaluate", "--config", "eval.toml", "--ego-weights", "ego.svow", "--comm-mode", "adversarial", "--out", "adv"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("adversary.weights"), "{}", stderr(&o));
    write(dir.path(), "adv.toml", &format!("{}\n[adversary]\nweights = \"adv.svow\"\n", IDM_CONFIG.replace("fully_visible", "adversarial")));
    let o = svoflow(dir.path(), &["evaluate", "--config", "adv.toml", "--ego-weights", "ego.svow", "--out", "adv", "--workers", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let logs = read_logs(&dir.path().join("adv/logs-idm.jsonl.gz")).unwrap();
    assert!(logs.iter().any(|l| l.steps.iter().any(|s| s.agents.iter().any(|a| a.mistaken_ego_svo.is_some()))));

    let o = svoflow(dir.path(), &["compare", "--a", "out/logs-idm.jsonl.gz", "--b", "adv/logs-idm.jsonl.gz", "--scope", "ego"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("approximate"));

    // a wrong-role weight file is a configuration error
    let o = svoflow(dir.path(), &["evaluate", "--config", "eval.toml", "--ego-weights", "adv.svow", "--out", "bad"]);
    assert_eq!(o.status.code(), Some(1));
}
