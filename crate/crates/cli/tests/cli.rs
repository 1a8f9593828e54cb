use std::path::Path;
use std::process::{Command, Output};

fn breathnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_breathnet")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Tiny corpus plus a config with small dims; returns the config path.
fn setup(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    let o = breathnet(&[
        "synth", "--out", p(&data), "--train-bonafide", "4", "--train-spoof", "4", "--eval-bonafide", "3",
        "--eval-spoof", "3", "--samples", "16000", "--seed", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = dir.join("run.toml");
    let run = dir.join("run");
    std::fs::write(
        &cfg,
        format!(
            "layers = 2\ndim = 8\nfilters = 4\ntaps = 33\nheads = 2\nlstm_hidden = [6, 4]\nfilm_hidden = 8\n\
             samples = 16000\nlr = 1e-3\nencoder_lr = 1e-4\nbatch_size = 4\nmax_epochs = 1\n\
             train_manifest = {:?}\ntrain_annotations = {:?}\neval_manifest = {:?}\neval_annotations = {:?}\n\
             out_dir = {:?}\ncheckpoint = {:?}\n",
            data.join("train/manifest.tsv"),
            data.join("train/breath.tsv"),
            data.join("eval/manifest.tsv"),
            data.join("eval/breath.tsv"),
            run,
            run.join("final.json"),
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn zero_epochs_exit_cleanly_without_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let o = breathnet(&["train", "--config", p(&cfg), "--max_epochs", "0"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("no checkpoint written"));
    assert!(!dir.path().join("run/final.json").exists());
    assert!(!dir.path().join("run/epoch_001.json").exists());
}

#[test]
fn train_eval_export_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    assert_eq!(code(&breathnet(&["train", "--config", p(&cfg)])), 0);
    let o = breathnet(&["eval", "--modes", "normal,zeros,ones", "--config", p(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for mode in ["normal", "zeros", "ones"] {
        assert!(dir.path().join(format!("run/report_{mode}.txt")).is_file());
    }
    let emb = dir.path().join("emb.csv");
    assert_eq!(code(&breathnet(&["export-emb", "--out", p(&emb), "--config", p(&cfg)])), 0);
    assert_eq!(std::fs::read_to_string(&emb).unwrap().lines().count(), 7);
    let o = breathnet(&["score", p(&dir.path().join("run/scores_normal.tsv"))]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("EER"));
}

#[test]
fn exit_codes_distinguish_config_data_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    assert_eq!(code(&breathnet(&["train", "--config", p(&cfg), "--no_such_key", "1"])), 2);
    assert_eq!(code(&breathnet(&["train", "--config", p(&cfg), "--heads", "3"])), 2);
    let missing = dir.path().join("missing.tsv");
    assert_eq!(code(&breathnet(&["train", "--config", p(&cfg), "--train_manifest", p(&missing)])), 3);
    assert_eq!(code(&breathnet(&["score", p(&missing)])), 3);
    let o = breathnet(&["train", "--config", p(&cfg), "--lr", "1e300", "--max_epochs", "3"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("run/last_good.json").is_file());
}
