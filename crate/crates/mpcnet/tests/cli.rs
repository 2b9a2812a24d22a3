use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;

fn mpcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpcnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn train(out: &Path, system: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--system", system, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    mpcnet(&args)
}

#[test]
fn short_training_run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = train(dir.path(), "redundant-di", &["--max-iter", "10", "--set", "trainer.eval_every=5"]);
    assert!(start.elapsed() < Duration::from_secs(5));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    assert_eq!(summary[0]["seed"], 0);
    let seed = dir.path().join("seed-0");
    for f in ["metrics.csv", "policy.bin", "buffer.bin", "summary.json"] {
        assert!(seed.join(f).is_file(), "{f}");
    }
    let metrics = std::fs::read_to_string(seed.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "iter,demo_seconds_accumulated,loss,avg_cost,survival_s,g_median,alpha,expert_entropy");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("10,"));
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--max-iter", "20", "--set", "trainer.eval_every=10", "--seed", "3"];
    assert_eq!(code(&train(a.path(), "cartpole", &args)), 0);
    assert_eq!(code(&train(b.path(), "cartpole", &args)), 0);
    for f in ["metrics.csv", "policy.bin", "buffer.bin"] {
        let x = std::fs::read(a.path().join("seed-3").join(f)).unwrap();
        let y = std::fs::read(b.path().join("seed-3").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cases: [&[&str]; 6] = [
        &["frobnicate"],
        &["train", "--out", out, "--set", "trainer.nope=1"],
        &["train", "--out", out, "--system", "pendulum"],
        &["train", "--out", out, "--tube", "maybe"],
        &["eval", "--out", out, "--policy", "/no/such/policy.bin"],
        &["verify", "--out", out, "--points", "0"],
    ];
    for args in cases {
        let o = mpcnet(args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&mpcnet(&["--help"])), 0);
}

#[test]
fn policy_for_another_system_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), "redundant-di", &["--max-iter", "0"])), 0);
    let policy = dir.path().join("seed-0/policy.bin");
    let o = mpcnet(&["eval", "--system", "cartpole", "--policy", policy.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("policy.bin"));
}

#[test]
fn verify_passes_and_detects_a_corrupted_value_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["verify", "--system", "redundant-di", "--out", out, "--points", "10", "--certificate-pairs", "100"];
    let o = mpcnet(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "point_kind,policy_kind,g_norm,rel_u_err");
    assert_eq!(csv, std::fs::read_to_string(dir.path().join("verify.csv")).unwrap());
    assert!(String::from_utf8_lossy(&o.stderr).contains("100/100"));

    let mut sabotaged = args.to_vec();
    sabotaged.extend_from_slice(&["--value-scale", "1.5"]);
    let o = mpcnet(&sabotaged);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL"));
}

#[test]
fn untrained_policy_on_the_hopper() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&train(dir.path(), "hopper1d", &["--max-iter", "0"])), 0);
    let policy = dir.path().join("seed-0/policy.bin");
    let p = policy.to_str().unwrap();

    let o = mpcnet(&["eval", "--out", out, "--policy", p, "--episodes", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let eval = stdout_json(&o);
    assert_eq!(eval["episodes"], 3);
    assert!(eval["survival_s"].as_f64().unwrap() < 3.0);
    assert_eq!(eval["full_survival"].as_f64().unwrap(), 0.0);

    let o = mpcnet(&["gating-trace", "--out", out, "--policy", p]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("gating_trace.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 9);
    assert_eq!(header[0], "t");
    let mut rows = 0;
    for line in lines {
        let p: Vec<f64> = line.split(',').skip(1).map(|s| s.parse().unwrap()).collect();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|v| (v - 0.125).abs() < 0.1), "{line}");
        rows += 1;
    }
    // the trace ends when the untrained hopper falls, well before one period
    assert!(rows > 0 && rows < 280, "{rows}");
}

#[test]
fn training_resumes_from_a_saved_buffer() {
    let dir = tempfile::tempdir().unwrap();
    let buf = dir.path().join("saved.bin");
    let first = dir.path().join("first");
    let o = train(&first, "redundant-di", &["--max-iter", "1", "--buffer-out", buf.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let n0 = stdout_json(&o)[0]["buffer_len"].as_u64().unwrap();
    assert!(n0 > 0);
    let o = train(&dir.path().join("second"), "redundant-di", &["--max-iter", "1", "--buffer-in", buf.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)[0]["buffer_len"].as_u64().unwrap(), 2 * n0);

    let o = train(&dir.path().join("third"), "redundant-di", &["--buffer-in", first.join("seed-0/metrics.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let o = train(&first, "cartpole", &["--max-iter", "5", "--loss", "bc", "--arch", "mlp", "--tube", "off"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let config = first.join("config.json");
    let echoed: Value = serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    assert_eq!(echoed["trainer"]["loss"], "bc");
    assert_eq!(echoed["trainer"]["arch"], "mlp");
    assert_eq!(echoed["trainer"]["tube_sampling"], false);
    let second = dir.path().join("b");
    let o = mpcnet(&["train", "--config", config.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for f in ["seed-0/metrics.csv", "seed-0/policy.bin"] {
        assert!(std::fs::read(first.join(f)).unwrap() == std::fs::read(second.join(f)).unwrap(), "{f}");
    }
}
