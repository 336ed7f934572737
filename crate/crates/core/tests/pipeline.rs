//! End to end through the binary: synth-data, train, enhance, evaluate,
//! report.

use std::path::Path;
use std::process::Command;

fn run(args: &[&str], cwd: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_phase-forge"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TRAIN: &str = r#"
batch_size = 2
epochs = 2
seed = 4
[injection]
setting = "supervision"
selection = { mode = "learned" }
[provider.toy]
hidden_layers = 4
dim = 8
[model]
hidden = 4
depth = 2
stride = 2
upscale = 1
[data]
manifest = "data/manifest.jsonl"
segment_s = 0.25
stride_s = 0.25
[data.augment]
max_shift_s = 0.05
"#;

#[test]
fn train_enhance_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    run(&["synth-data", "--seed", "8", "--out", "data", "--utterances", "4", "--duration", "0.5"], root);
    std::fs::write(root.join("train.toml"), TRAIN).unwrap();

    let report: serde_json::Value = serde_json::from_str(&run(&["train", "--config", "train.toml", "--out", "run"], root)).unwrap();
    assert_eq!(report["epochs"], 2);
    let ckpt = report["last_checkpoint"].as_str().unwrap().to_string();
    assert!(root.join(&ckpt).is_file() || Path::new(&ckpt).is_file());
    let losses = std::fs::read_to_string(root.join("run/losses.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(losses.lines().next().unwrap()).unwrap();
    assert_eq!(first["setting"], "supervision");
    assert_eq!(first["sc"].as_array().unwrap().len(), 3);

    run(&["enhance", "--checkpoint", &ckpt, "--input", "data/noisy", "--out", "enhanced"], root);
    let noisy = std::fs::read_dir(root.join("data/noisy")).unwrap().count();
    assert_eq!(std::fs::read_dir(root.join("enhanced")).unwrap().count(), noisy);

    // Directory mode and checkpoint mode see the same estimates.
    let dirs: serde_json::Value = serde_json::from_str(&run(
        &["evaluate", "--reference-dir", "data/clean", "--estimate-dir", "enhanced", "--metrics", "SI-SNR,LSD", "--out", "ev-dirs"],
        root,
    ))
    .unwrap();
    let ckpt_eval: serde_json::Value = serde_json::from_str(&run(
        &[
            "evaluate", "--checkpoint", &ckpt, "--manifest", "data/manifest.jsonl", "--metrics", "SI-SNR,LSD", "--results-db",
            "results.jsonl", "--out", "ev-ckpt",
        ],
        root,
    ))
    .unwrap();
    for m in ["SI-SNR", "LSD"] {
        let a = dirs[m].as_f64().unwrap();
        let b = ckpt_eval[m].as_f64().unwrap();
        assert!(a.is_finite() && b.is_finite());
        // Enhanced files are stored as 32-bit floats.
        assert!((a - b).abs() < 1e-3, "{m}: {a} vs {b}");
    }
    assert!(root.join("ev-ckpt/records.csv").is_file());

    let listed = run(&["report", "--results", "results.jsonl", "--out", "report"], root);
    for name in ["table1.csv", "table2.md", "improvements.csv", "runs.csv", "layer_weights.csv", "layer_weights.svg"] {
        assert!(listed.contains(name), "{name} missing from\n{listed}");
    }
    let table1 = std::fs::read_to_string(root.join("report/table1.csv")).unwrap();
    assert!(table1.contains("\"H=4,U=1,S=2\",Sup,toy-LrnW"), "{table1}");
}

#[test]
fn invalid_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.toml"),
        "[injection]\nsetting = \"conditioning\"\n[model]\ncausal = true\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_phase-forge"))
        .args(["train", "--config", "bad.toml"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("conditioning requires non-causal setup"), "{err}");
}
