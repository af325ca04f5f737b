use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn noisylab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisylab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn out_arg(dir: &Path) -> String {
    dir.to_string_lossy().into_owned()
}

#[test]
fn theory_gamma_prints_constants() {
    let o = noisylab(&["theory", "gamma", "--k", "10", "--eps", "0.4"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("gamma1=0.5556"), "{s}");
    assert!(s.contains("gamma2=0.0444"), "{s}");
}

#[test]
fn theory_json_is_parseable() {
    let o = noisylab(&["--json", "theory", "bound", "--vc", "10", "--n", "10000"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!((v["estimation_bound"].as_f64().unwrap() - 1.0379).abs() < 1e-4);
}

#[test]
fn exit_codes() {
    assert_eq!(noisylab(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(noisylab(&["theory", "gamma", "--k", "1", "--eps", "0.1"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let o = noisylab(&["inject-noise", "--input", missing.to_str().unwrap(), "--kind", "symmetric", "--eps", "0.2", "--output", "x.csv"]);
    assert_eq!(o.status.code(), Some(3));
    let tight = noisylab(&["--out", &out_arg(dir.path()), "simulate-t3", "--delta", "2", "--e", "0.4", "--n-mc", "200", "--tolerance", "1e-9"]);
    assert_eq!(tight.status.code(), Some(2));
}

#[test]
fn gen_data_then_inject_noise() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let noisy = dir.path().join("noisy.csv");
    let o = noisylab(&["--seed", "3", "gen-data", "--set", "n=100", "--file", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&data).unwrap().lines().count(), 101);
    let o = noisylab(&[
        "inject-noise", "--input", data.to_str().unwrap(), "--kind", "symmetric", "--eps", "0.3", "--output", noisy.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&noisy).unwrap().lines().count(), 101);
}

#[test]
fn train_writes_metrics_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |id: &str, extra: &[&str]| {
        let mut args = vec!["--seed", "5", "--out"];
        let out = out_arg(dir.path());
        args.push(&out);
        args.extend(["train", "--set", "epochs=3", "--set", "n=200", "--set", "test_n=100"]);
        let rid = format!("run_id={id}");
        args.extend(["--set", &rid]);
        args.extend(extra);
        let o = noisylab(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        dir.path().join(id)
    };
    let a = run("a", &["--lambda", "1"]);
    let b = run("b", &["--lambda", "1"]);
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        "epoch,noisy_train_acc,clean_train_acc,clean_test_acc,loss_sl,loss_info,loss_reg"
    );
    assert_eq!(metrics.lines().count(), 5);
    assert_eq!(metrics, fs::read_to_string(b.join("metrics.csv")).unwrap());
    assert!(a.join("model.bin").exists());

    let frozen = run("frozen", &["--freeze-encoder"]);
    let meta = fs::read_to_string(frozen.join("meta.txt")).unwrap();
    assert!(meta.lines().any(|l| l == "freeze_encoder=true"), "{meta}");
}

#[test]
fn downsample_study_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = noisylab(&["--out", &out_arg(dir.path()), "--plot", "downsample-study", "--steps", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("downsample.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10);
    assert!(dir.path().join("downsample_gap.svg").exists());
}
