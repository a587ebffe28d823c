//! End-to-end runs of the `bridgekit` binary on tiny configurations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bridgekit::model::Checkpoint;
use tempfile::TempDir;

fn bridgekit(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bridgekit"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = bridgekit(args, &[]);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let text = format!(
        "seed = 3\n\n[schedule]\nid = \"brownian\"\n\n[dataset]\nid = \"mixture2d-shifted\"\n\n[model]\nhidden = [16, 16]\nstats_samples = 500\n\n{body}"
    );
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_kind(dir: &Path) -> String {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("error.json")).unwrap()).unwrap();
    v["error"].as_str().unwrap().to_string()
}

/// Pretrain, CBT from it, sample, replay and evaluate.
struct Pipeline {
    tmp: TempDir,
}

impl Pipeline {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        let d = tmp.path();
        let pre = write_config(d, "pretrain.toml", "[train]\nsteps = 30\nbatch_size = 32\n");
        ok(&["pretrain", "--config", s(&pre), "--out", s(&d.join("pretrain"))]);
        let cbt = write_config(
            d,
            "cbt.toml",
            &format!(
                "[train]\nsteps = 20\nbatch_size = 32\nlr = 1e-4\ninit = \"{}\"\n",
                s(&d.join("pretrain/checkpoint.json"))
            ),
        );
        ok(&["cbt", "--config", s(&cbt), "--out", s(&d.join("cbt"))]);
        let sample = write_config(
            d,
            "sample.toml",
            &format!(
                "[sample]\ncheckpoint = \"{}\"\nnfe = 2\nplan = {{ mode = \"pinned-second\", t2 = 0.9 }}\nn = 150\n",
                s(&d.join("cbt/checkpoint.json"))
            ),
        );
        ok(&["sample", "--config", s(&sample), "--out", s(&d.join("sample"))]);
        Self { tmp }
    }

    fn dir(&self) -> &Path {
        self.tmp.path()
    }
}

#[test]
fn pipeline_replays_and_reproduces() {
    let p = Pipeline::new();
    let d = p.dir();
    for f in ["checkpoint.json", "metrics.csv", "config.toml", "log.ndjson"] {
        assert!(d.join("cbt").join(f).exists(), "cbt/{f}");
    }
    let samples = fs::read(d.join("sample/samples.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&samples).lines().count(), 151);

    // replay from the recorded tapes
    ok(&[
        "sample",
        "--config",
        s(&d.join("sample.toml")),
        "--out",
        s(&d.join("replay")),
        "--replay",
        s(&d.join("sample/tapes.ndjson")),
    ]);
    assert_eq!(fs::read(d.join("replay/samples.csv")).unwrap(), samples);

    // evaluating the written samples gives the sampler's own metrics
    let eval = write_config(d, "eval.toml", &format!("[eval]\nsamples = \"{}\"\n", s(&d.join("sample/samples.csv"))));
    ok(&["eval", "--config", s(&eval), "--out", s(&d.join("eval"))]);
    assert_eq!(fs::read(d.join("eval/metrics.csv")).unwrap(), fs::read(d.join("sample/metrics.csv")).unwrap());

    // rerunning from the stored config reproduces every artifact
    for (cmd, run) in [("cbt", "cbt"), ("sample", "sample")] {
        let again = d.join(format!("{run}-again"));
        ok(&[cmd, "--config", s(&d.join(run).join("config.toml")), "--out", s(&again)]);
        for f in ["checkpoint.json", "samples.csv", "tapes.ndjson", "metrics.csv", "config.toml"] {
            let a = d.join(run).join(f);
            if a.exists() {
                assert_eq!(fs::read(&a).unwrap(), fs::read(again.join(f)).unwrap(), "{run}/{f}");
            }
        }
    }
}

#[test]
fn zero_steps_keep_the_initial_parameters() {
    let p = Pipeline::new();
    let d = p.dir();
    let cfg = write_config(
        d,
        "cbt0.toml",
        &format!("[train]\nsteps = 0\ninit = \"{}\"\n", s(&d.join("pretrain/checkpoint.json"))),
    );
    ok(&["cbt", "--config", s(&cfg), "--out", s(&d.join("cbt0"))]);
    let init = Checkpoint::load(&d.join("pretrain/checkpoint.json")).unwrap();
    let after = Checkpoint::load(&d.join("cbt0/checkpoint.json")).unwrap();
    assert_eq!(init.params, after.params);
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "pretrain.toml", "[train]\nsteps = 10\nbatch_size = 40\n");
    ok(&["pretrain", "--config", s(&cfg), "--out", s(&d.join("default"))]);
    let out = bridgekit(&["pretrain", "--config", s(&cfg), "--out", s(&d.join("one"))], &[("BRIDGEKIT_THREADS", "1")]);
    assert!(out.status.success());
    let out = bridgekit(&["pretrain", "--config", s(&cfg), "--out", s(&d.join("three"))], &[("BRIDGEKIT_THREADS", "3")]);
    assert!(out.status.success());
    let reference = fs::read(d.join("default/checkpoint.json")).unwrap();
    assert_eq!(fs::read(d.join("one/checkpoint.json")).unwrap(), reference);
    assert_eq!(fs::read(d.join("three/checkpoint.json")).unwrap(), reference);
}

#[test]
fn flags_override_the_config() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "pretrain.toml", "[train]\nsteps = 500\nbatch_size = 16\n");
    let out = d.join("run");
    ok(&["pretrain", "--config", s(&cfg), "--out", s(&out), "--seed", "9", "--steps", "2", "--dataset", "gauss1d"]);
    let stored = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(stored.contains("seed = 9"));
    assert!(stored.contains("steps = 2"));
    assert!(stored.contains("gauss1d"));
    let ck = Checkpoint::load(&out.join("checkpoint.json")).unwrap();
    assert_eq!(ck.widths.first(), Some(&(2 + 1)));
}

#[test]
fn missing_checkpoint_is_reported() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "sample.toml", &format!("[sample]\ncheckpoint = \"{}\"\n", s(&d.join("nope.json"))));
    let out = bridgekit(&["sample", "--config", s(&cfg), "--out", s(&d.join("run"))], &[]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&d.join("run")), "checkpoint");
}

#[test]
fn schema_violations_are_reported() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "bad.toml", "[train]\nsteps = 1\nlearning_rate = 0.1\n");
    let out = bridgekit(&["pretrain", "--config", s(&cfg), "--out", s(&d.join("run"))], &[]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&d.join("run")), "config");

    let out = bridgekit(&["distill", "--config", s(&write_config(d, "distill.toml", "")), "--out", s(&d.join("distill"))], &[]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&d.join("distill")), "config");
}

#[test]
fn verify_runs_selected_criteria() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "verify.toml", "");
    let out = ok(&["verify", "--config", s(&cfg), "--out", s(&d.join("verify")), "--criterion", "3", "--criterion", "7"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[PASS] criterion  3"));
    assert!(stdout.contains("[PASS] criterion  7"));
    let csv = fs::read_to_string(d.join("verify/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
