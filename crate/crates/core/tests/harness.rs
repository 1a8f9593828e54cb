use std::path::Path;

use breathnet::breathmask::MaskMode;
use breathnet::harness::{evaluate, export_embeddings, train, RunConfig};
use breathnet::synth::{generate_corpus, CorpusSpec, SplitCounts};
use breathnet::Error;

const SAMPLES: usize = 16_000;

fn tiny_corpus(dir: &Path) {
    let spec = CorpusSpec {
        train: SplitCounts { bonafide: 6, spoof: 6 },
        eval: SplitCounts { bonafide: 4, spoof: 4 },
        samples: SAMPLES,
        seed: 3,
        ..CorpusSpec::default()
    };
    generate_corpus(&spec, dir).unwrap();
}

fn tiny_config(corpus: &Path, out: &Path) -> RunConfig {
    RunConfig {
        layers: 2,
        dim: 8,
        filters: 4,
        taps: 33,
        heads: 2,
        lstm_hidden: vec![6, 4],
        film_hidden: 8,
        samples: SAMPLES,
        lr: 1e-3,
        encoder_lr: 1e-4,
        batch_size: 4,
        max_epochs: 2,
        seed: 5,
        train_manifest: corpus.join("train/manifest.tsv"),
        train_annotations: corpus.join("train/breath.tsv"),
        eval_manifest: corpus.join("eval/manifest.tsv"),
        eval_annotations: corpus.join("eval/breath.tsv"),
        out_dir: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn json_files(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .map(|rd| rd.filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json")).count())
        .unwrap_or(0)
}

#[test]
fn zero_epochs_write_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    tiny_corpus(&dir.path().join("data"));
    let cfg = RunConfig { max_epochs: 0, ..tiny_config(&dir.path().join("data"), &dir.path().join("run")) };
    let out = train::<f64>(&cfg).unwrap();
    assert!(out.epochs.is_empty() && out.checkpoints.is_empty() && out.final_checkpoint.is_none());
    assert_eq!(json_files(&cfg.out_dir), 0);
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_corpus(&data);
    let mut bytes = Vec::new();
    for k in 0..2 {
        let cfg = tiny_config(&data, &dir.path().join(format!("run{k}")));
        let out = train::<f32>(&cfg).unwrap();
        assert_eq!(out.checkpoints.len(), 2);
        let ck = out.final_checkpoint.unwrap();
        let ev = evaluate::<f32>(&cfg, &ck, MaskMode::Normal, &cfg.out_dir).unwrap();
        bytes.push((std::fs::read(out.final_path.unwrap()).unwrap(), std::fs::read(ev.score_path).unwrap()));
    }
    assert!(bytes[0].0 == bytes[1].0, "final checkpoints differ");
    assert!(bytes[0].1 == bytes[1].1, "score files differ");
}

#[test]
fn evaluation_skips_unreadable_audio_and_rejects_empty_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_corpus(&data);
    let cfg = tiny_config(&data, &dir.path().join("run"));
    let ck = train::<f64>(&RunConfig { max_epochs: 1, ..cfg.clone() }).unwrap().final_checkpoint.unwrap();

    std::fs::remove_file(data.join("eval/wav/eval_00002.wav")).unwrap();
    let ev = evaluate::<f64>(&cfg, &ck, MaskMode::Normal, &dir.path().join("scored")).unwrap();
    assert_eq!(ev.skipped, 1);
    assert_eq!(ev.scores.len(), 7);
    assert!(ev.render().contains("skipped utterances: 1"));

    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("empty_run");
    let err = evaluate::<f64>(&RunConfig { eval_manifest: empty, ..cfg }, &ck, MaskMode::Normal, &out).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
    assert!(!out.join("scores_normal.tsv").exists());
}

#[test]
fn constant_mask_modes_need_no_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_corpus(&data);
    let cfg = tiny_config(&data, &dir.path().join("run"));
    let ck = train::<f64>(&RunConfig { max_epochs: 1, ..cfg.clone() }).unwrap().final_checkpoint.unwrap();
    let blind = RunConfig { eval_annotations: dir.path().join("absent.tsv"), ..cfg.clone() };
    for mode in [MaskMode::Zeros, MaskMode::Ones] {
        let ev = evaluate::<f64>(&blind, &ck, mode, &cfg.out_dir).unwrap();
        assert_eq!(ev.scores.len(), 8);
        assert!(cfg.out_dir.join(format!("report_{mode}.txt")).is_file());
    }
    assert!(matches!(evaluate::<f64>(&blind, &ck, MaskMode::Normal, &cfg.out_dir), Err(Error::Data(_))));
}

#[test]
fn embedding_export_has_a_header_and_one_line_per_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_corpus(&data);
    let cfg = tiny_config(&data, &dir.path().join("run"));
    let ck = train::<f32>(&RunConfig { max_epochs: 1, ..cfg.clone() }).unwrap().final_checkpoint.unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_eq!(export_embeddings::<f32>(&cfg, &ck, &a).unwrap(), 8);
    export_embeddings::<f32>(&cfg, &ck, &b).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 9);
    assert!(lines[0].starts_with("utt_id,label,e0,"));
    assert!(lines.iter().all(|l| l.split(',').count() == 2 + cfg.dim));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}
