use std::path::Path;
use std::process::{Command, Output};

use gaitlab::experiment::ExperimentConfig;
use gaitlab::model::{Profile, TctstConfig};
use gaitlab::train::TrainConfig;

fn gaitlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaitlab")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = gaitlab(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Small model, short recordings and two-epoch runs.
fn write_tiny_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::for_profile(Profile::Desk);
    cfg.generator.strides_per_recording = 8;
    let quick = TrainConfig {
        epochs: 2,
        patience: 5,
        batch_size: 32,
        window_stride: 60,
        warmup_epochs: 1,
        ..TrainConfig::default()
    };
    cfg.pretrain.window_stride = 60;
    cfg.pretrain_train = quick.clone();
    cfg.finetune = quick;
    cfg.architecture = Some(TctstConfig {
        emb_dim: 8,
        n_head: 2,
        n_layers: 1,
        latent_dim: 8,
        ..TctstConfig::for_profile(Profile::Desk, 100)
    });
    let p = dir.join("tiny.json");
    std::fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn unknown_flag_prints_usage_and_fails() {
    let out = gaitlab(&["gen", "--no-such-flag"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = gaitlab(&["finetune", "--data", "x", "--out", "y"]);
    assert!(!out.status.success());
}

#[test]
fn missing_inputs_fail_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = gaitlab(&["eval", "--data", "/nonexistent", "--checkpoint", "/nonexistent", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    let cfg = write_tiny_config(tmp.path());

    ok(&["gen", "--subjects", "10", "--seed", "3", "--config", &cfg, "--out", &d("data")]);
    let csvs = std::fs::read_dir(d("data")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv")).count();
    assert_eq!(csvs, 10);
    for f in ["manifest.json", "config.json", "templates.json"] {
        assert!(tmp.path().join("data").join(f).exists(), "{f}");
    }
    ok(&["gen", "--subjects", "10", "--seed", "3", "--config", &cfg, "--out", &d("data2")]);
    assert_eq!(read(&tmp.path().join("data/subject_07.csv")), read(&tmp.path().join("data2/subject_07.csv")));

    let common = ["--config", cfg.as_str(), "--lb", "50", "--seed", "4"];
    let with = |extra: &[&str]| -> Vec<String> { extra.iter().map(|s| s.to_string()).chain(common.iter().map(|s| s.to_string())).collect() };
    let run = |extra: &[&str]| {
        let a = with(extra);
        ok(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };

    run(&["pretrain", "--data", &d("data"), "--fold", "2", "--out", &d("pre")]);
    assert!(tmp.path().join("pre/checkpoint/weights.bin").exists());
    assert!(tmp.path().join("pre/pretrain_log.jsonl").exists());
    run(&["finetune", "--data", &d("data"), "--fold", "2", "--from-pretrained", &d("pre/checkpoint"), "--out", &d("ft_pt")]);
    run(&["finetune", "--data", &d("data"), "--fold", "2", "--from-scratch", "--out", &d("ft_s")]);
    let fold = |dir: &str| -> serde_json::Value {
        let v: serde_json::Value = serde_json::from_slice(&read(&tmp.path().join(dir).join("report.json"))).unwrap();
        v["fold"].clone()
    };
    assert_eq!(fold("ft_pt"), fold("ft_s"));
    assert_eq!(fold("ft_s")["index"], 2);

    // A pre-training checkpoint from another fold is refused.
    let a = with(&["finetune", "--data", &d("data"), "--fold", "1", "--from-pretrained", &d("pre/checkpoint"), "--out", &d("bad")]);
    assert!(!gaitlab(&a.iter().map(String::as_str).collect::<Vec<_>>()).status.success());

    run(&["eval", "--data", &d("data"), "--checkpoint", &d("ft_pt/checkpoint"), "--fold", "2", "--out", &d("ev")]);
    let m: serde_json::Value = serde_json::from_slice(&read(&tmp.path().join("ev/metrics.json"))).unwrap();
    assert_eq!(m["all"]["per_subject_mean"]["subjects"], 2);
    assert!(tmp.path().join("ev/metrics.csv").exists());

    // Rerunning from the embedded config reproduces the checkpoint bit for bit.
    let rerun_cfg = d("ft_s/config.json");
    ok(&["finetune", "--data", &d("data"), "--fold", "2", "--from-scratch", "--config", &rerun_cfg, "--lb", "50", "--seed", "4", "--out", &d("ft_s2")]);
    assert_eq!(read(&tmp.path().join("ft_s/checkpoint/weights.bin")), read(&tmp.path().join("ft_s2/checkpoint/weights.bin")));
    assert_eq!(read(&tmp.path().join("ft_s/checkpoint/manifest.json")), read(&tmp.path().join("ft_s2/checkpoint/manifest.json")));

    let stream = ok(&["plan", "--checkpoint", &d("ft_s/checkpoint"), "--input", &d("data/subject_04.csv")]);
    let lines: Vec<&str> = stream.lines().collect();
    assert_eq!(lines[0], "t,phase_pct,rate_pct,event,target_deg,latency_ms");
    let rows = std::fs::read_to_string(d("data/subject_04.csv")).unwrap().lines().count() - 1;
    assert_eq!(lines.len() - 1, rows);
    assert!(lines[1].ends_with(",,,,,"));
    assert_eq!(lines[50].split(',').count(), 6);
    assert!(!lines[50].split(',').nth(1).unwrap().is_empty());

    let b = ok(&["bench", "--checkpoint", &d("ft_s/checkpoint"), "--samples", "200", "--warmup", "10", "--out", &d("bench")]);
    assert!(b.contains("median"));
    let l: serde_json::Value = serde_json::from_slice(&read(&tmp.path().join("bench/latency.json"))).unwrap();
    assert_eq!(l["report"]["samples"], 200);
}
