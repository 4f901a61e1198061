use std::fs;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sscmmd"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TOY: &str = r#"{
  "batch_size": 8, "mu": 2, "epochs": 3,
  "encoder": { "hidden": [8], "embed_dim": 4, "activation": "tanh" },
  "data": {
    "source": { "gaussian_mixture": { "classes": 2, "per_class": 30, "dim": 2, "separation": 5.0 } },
    "test_fraction": 0.2
  }
}"#;

#[test]
fn mmd_prints_twelve_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    fs::write(&a, "0,0\n").unwrap();
    fs::write(&b, "1,0\n").unwrap();
    let o = run(&["mmd", "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap(), "--sigma", "1"]);
    assert!(o.status.success());
    // 2 - 2 exp(-1/2)
    assert_eq!(stdout(&o).trim(), "0.786938680575");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (a, c) = (dir.path().join("a.csv"), dir.path().join("c.csv"));
    fs::write(&a, "0,0\n").unwrap();
    fs::write(&c, "0,0,0\n").unwrap();
    let mismatch = run(&["mmd", "--a", a.to_str().unwrap(), "--b", c.to_str().unwrap()]);
    assert_eq!(mismatch.status.code(), Some(2));
    assert_eq!(run(&["mmd", "--a", a.to_str().unwrap(), "--b", a.to_str().unwrap(), "--sigma", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--config", "/nonexistent/cfg.json"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--lambda-mmd", "-1", "--print-config"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{ "batch_sise": 3 }"#).unwrap();
    let o = run(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("batch_sise"));
}

#[test]
fn print_config_reflects_overrides() {
    let o = run(&["train", "--print-config", "--epochs", "5", "--hidden", "4,4", "--lambda-mmd", "0.5"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["epochs"], 5);
    assert_eq!(v["lambda_mmd"], 0.5);
    assert_eq!(v["encoder"]["hidden"], serde_json::json!([4, 4]));
    assert_eq!(v["batch_size"], 64);
}

#[test]
fn gradcheck_passes_and_detects_fault() {
    let ok = run(&["gradcheck", "--seeds", "2"]);
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("l_total"));
    let bad = run(&["gradcheck", "--seeds", "1", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("l_mmd"));
}

#[test]
fn train_resume_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.json");
    fs::write(&cfg, TOY).unwrap();
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    let c = cfg.to_str().unwrap();
    assert!(run(&["train", "--config", c, "--out", full.to_str().unwrap()]).status.success());

    let halted = run(&["train", "--config", c, "--out", part.to_str().unwrap(), "--halt-after-epoch", "1"]);
    assert!(halted.status.success());
    assert!(!part.join("summary.json").exists());
    let resumed = run(&["train", "--config", c, "--out", part.to_str().unwrap(), "--resume"]);
    assert!(resumed.status.success());
    assert_eq!(
        fs::read(full.join("metrics.csv")).unwrap(),
        fs::read(part.join("metrics.csv")).unwrap()
    );
    let changed = run(&["train", "--config", c, "--out", part.to_str().unwrap(), "--resume", "--seed", "9"]);
    assert_eq!(changed.status.code(), Some(2));

    let e = run(&["eval", "--run", full.to_str().unwrap()]);
    assert!(e.status.success());
    let out = stdout(&e);
    assert!(out.contains("epoch: 3"), "{out}");
    let acc: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("test accuracy: "))
        .unwrap()
        .parse()
        .unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(full.join("summary.json")).unwrap()).unwrap();
    let recorded = summary["final_test_accuracy"].as_f64().unwrap();
    assert!((acc - recorded).abs() < 1e-4);
}

#[test]
fn gen_data_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rings.csv");
    let o = run(&[
        "gen-data", "--kind", "rings", "--classes", "3", "--per-class", "20", "--seed", "4", "--out",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&data).unwrap().lines().filter(|l| !l.is_empty()).count(), 61);

    let split = dir.path().join("split.json");
    let o = run(&[
        "split", "--data", data.to_str().unwrap(), "--labels-per-class", "2", "--test-fraction", "0.25",
        "--out", split.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&split).unwrap()).unwrap();
    let len = |k: &str| v[k].as_array().unwrap().len();
    assert_eq!(len("labeled"), 6);
    assert_eq!(len("test"), 15);
    assert_eq!(len("unlabeled"), 39);
}
