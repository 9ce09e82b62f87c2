use std::path::Path;
use std::process::{Command, Output};

fn mlagru(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mlagru"));
    cmd.args(args).current_dir(dir);
    for (k, _) in std::env::vars() {
        if k.starts_with("MLAGRU_") {
            cmd.env_remove(k);
        }
    }
    cmd.envs(env.iter().copied());
    cmd.output().unwrap()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn samples(o: &Output) -> u64 {
    stdout_json(o)["samples"].as_u64().unwrap()
}

#[test]
fn flags_beat_env_beat_config_beat_defaults() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("run.conf"), "# synthetic data\nper_class = 2\n").unwrap();
    let base = ["synth-data", "--out", "d.gld", "--config", "run.conf"];

    assert_eq!(samples(&mlagru(p, &base, &[])), 42);
    assert_eq!(samples(&mlagru(p, &base, &[("MLAGRU_PER_CLASS", "3")])), 63);
    let mut with_flag = base.to_vec();
    with_flag.extend(["--per-class", "4"]);
    assert_eq!(samples(&mlagru(p, &with_flag, &[("MLAGRU_PER_CLASS", "3")])), 84);
    let cfg_env = [("MLAGRU_CONFIG", "run.conf")];
    assert_eq!(samples(&mlagru(p, &["synth-data", "--out", "e.gld"], &cfg_env)), 42);
    assert_eq!(samples(&mlagru(p, &["synth-data", "--out", "f.gld"], &[])), 630);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(mlagru(p, &["frobnicate"], &[]).status.code(), Some(2));
    assert_eq!(mlagru(p, &["train", "--data", "x.gld", "--epochs", "0"], &[]).status.code(), Some(2));
    assert_eq!(mlagru(p, &["train"], &[]).status.code(), Some(2));
    std::fs::write(p.join("bad.conf"), "epochs = 0\n").unwrap();
    let o = mlagru(p, &["train", "--data", "x.gld", "--config", "bad.conf"], &[]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(p.join("junk.conf"), "epochs\n").unwrap();
    assert_eq!(mlagru(p, &["classes", "--config", "junk.conf"], &[]).status.code(), Some(2));

    let o = mlagru(p, &["eval", "--model", "missing.gmd", "--data", "missing.gld"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    let log = String::from_utf8_lossy(&o.stderr);
    let line = log.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(v["level"], "ERROR");

    std::fs::write(p.join("garbage.gmd"), b"not a model").unwrap();
    let o = mlagru(p, &["bench", "--model", "garbage.gmd", "--iterations", "30", "--warmup", "5"], &[]);
    assert_eq!(o.status.code(), Some(1));
    let o = mlagru(p, &["bench", "--iterations", "2"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_every_subcommand() {
    let d = tempfile::tempdir().unwrap();
    let o = mlagru(d.path(), &["--help"], &[]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["synth-data", "train", "eval", "compare", "bench", "serve", "predict", "classes", "rerun"] {
        assert!(text.contains(sub), "{sub} missing from --help");
    }
}

#[test]
fn pipeline_produces_reports_and_events() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let o = mlagru(p, &["synth-data", "--per-class", "2", "--seed", "3", "--out", "d.gld"], &[]);
    assert_eq!(stdout_json(&o)["samples"], 42);
    let o = mlagru(
        p,
        &["train", "--data", "d.gld", "--epochs", "1", "--seed", "3", "--out-dir", "run", "--train-fraction", "0.5"],
        &[],
    );
    let train = stdout_json(&o);
    assert_eq!(train["parameters"], 544149);
    assert_eq!(train["train_samples"], 21);
    assert_eq!(train["test_samples"], 21);

    let o = mlagru(p, &["eval", "--model", "run/model.gmd", "--data", "run/test.gld", "--plots"], &[]);
    let eval = stdout_json(&o);
    assert_eq!(eval["samples"], 21);
    let acc = eval["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    for f in ["report.json", "per_class.csv", "summary.json", "confusion.svg", "roc.svg", "manifest.json"] {
        assert!(p.join("eval").join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("eval/report.json")).unwrap()).unwrap();
    assert!(report.is_object());

    let o = mlagru(
        p,
        &["predict", "--model", "run/model.gmd", "--data", "run/test.gld", "--threshold", "0", "--out", "ev.jsonl"],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // 21 sequences of 30 frames at stride 30: floor((630 - 30) / 30) + 1 windows.
    let events = String::from_utf8_lossy(&o.stdout).lines().count();
    assert_eq!(events, 21);
    assert_eq!(std::fs::read_to_string(p.join("ev.jsonl")).unwrap().lines().count(), 21);

    let o = mlagru(p, &["classes", "--out", "classes.tsv"], &[]);
    assert!(o.status.success());
    let rows = String::from_utf8_lossy(&o.stdout)
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .count();
    assert_eq!(rows, 21);
}
