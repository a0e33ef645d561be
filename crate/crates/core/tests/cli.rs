use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mixtext::harness::RunConfig;
use mixtext::text::{write_jsonl, Example};
use mixtext::trainer::AugmenterSpec;

fn mixtext(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixtext"))
        .current_dir(dir)
        .env("MIXTEXT_CACHE_DIR", dir.join("cache"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mixtext(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Smoke preset cut to three epochs.
fn tiny() -> RunConfig {
    let mut cfg = RunConfig::smoke(0);
    cfg.train.epochs = 3;
    cfg.train.warmup_epochs = 1;
    cfg
}

fn save(cfg: &RunConfig, path: &Path) -> String {
    cfg.save(path).unwrap();
    path.to_string_lossy().into_owned()
}

fn tiny_config(dir: &Path) -> String {
    save(&tiny(), &dir.join("tiny.toml"))
}

fn corpus(dir: &Path) -> String {
    let words = [
        ["good", "great", "fine", "nice"],
        ["bad", "awful", "poor", "sad"],
    ];
    let mut examples = Vec::new();
    for i in 0..120 {
        let class = i % 2;
        let w = &words[class];
        let text = format!(
            "the {} day was {} and {}",
            w[i % 4],
            w[(i / 2) % 4],
            ["so", "very", "quite"][i % 3]
        );
        examples.push(Example::new(
            format!("e{i}"),
            text,
            Some(["pos", "neg"][class]),
        ));
    }
    let p = dir.join("corpus.jsonl");
    write_jsonl(&p, &examples).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn corpus_to_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let corpus = corpus(dir);
    fs::write(
        dir.join("syn.txt"),
        "good great fine nice\nbad awful poor\n",
    )
    .unwrap();
    let mut c = tiny();
    c.augment = vec![
        AugmenterSpec::Synonym {
            prob: 0.5,
            dictionary: Some(dir.join("syn.txt")),
        },
        AugmenterSpec::Chain {
            steps: vec![
                AugmenterSpec::Swap { swaps: 1 },
                AugmenterSpec::Delete { prob: 0.1 },
            ],
        },
    ];
    let cfg = save(&c, &dir.join("corpus.toml"));
    let out = ok(
        dir,
        &[
            "prepare",
            "--config",
            &cfg,
            "--corpus",
            &corpus,
            "--labeled-per-class",
            "10",
            "--unlabeled-per-class",
            "20",
            "--dev-per-class",
            "10",
            "--seed",
            "7",
            "--out",
            "prep",
        ],
    );
    assert!(
        out.contains("20 labeled, 40 unlabeled, 20 dev, 40 test"),
        "{out}"
    );
    for f in ["splits.json", "vocab.txt", "unlabeled_truth.sealed.json"] {
        assert!(dir.join("prep").join(f).exists(), "{f}");
    }
    let splits = fs::read_to_string(dir.join("prep/splits.json")).unwrap();
    assert!(!splits.contains("great day"));

    ok(
        dir,
        &["augment-cache", "--config", &cfg, "--prepared", "prep"],
    );
    let augs = fs::read_to_string(dir.join("prep/augmentations.jsonl")).unwrap();
    assert_eq!(augs.lines().count(), 80);

    let out = ok(
        dir,
        &[
            "train",
            "--config",
            &cfg,
            "--seed",
            "7",
            "--prepared",
            "prep",
            "--out",
            "run",
        ],
    );
    assert!(out.starts_with("mixtext: test accuracy"), "{out}");
    for f in [
        "metrics.csv",
        "model.ckpt",
        "manifest.json",
        "record.json",
        "vocab.txt",
    ] {
        assert!(dir.join("run").join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(dir.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);

    let out = ok(dir, &["eval", "--run", "run"]);
    assert!(out.contains("on 40 examples"), "{out}");
    let out = ok(dir, &["eval", "--run", "run", "--data", &corpus]);
    assert!(out.contains("on 120 examples"), "{out}");
}

#[test]
fn training_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = tiny_config(dir);
    ok(
        dir,
        &["train", "--config", &cfg, "--mode", "tmix", "--out", "a"],
    );
    ok(
        dir,
        &["train", "--config", &cfg, "--mode", "tmix", "--out", "b"],
    );
    for f in ["metrics.csv", "model.ckpt"] {
        assert_eq!(
            fs::read(dir.join("a").join(f)).unwrap(),
            fs::read(dir.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn ablation_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = tiny_config(dir);
    let out = ok(
        dir,
        &[
            "ablate",
            "--config",
            &cfg,
            "--mode",
            "strip_component",
            "--reps",
            "3",
            "--out",
            "abl.json",
        ],
    );
    assert!(out.contains("12 records written"), "{out}");
    ok(
        dir,
        &[
            "export",
            "--records",
            "abl.json",
            "--out",
            "plots/abl.csv",
            "--summary",
            "summary.csv",
        ],
    );
    let csv = fs::read_to_string(dir.join("plots/abl.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("label,config_hash,seed,test_acc,best_epoch,epoch"));
    let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
    let labels: Vec<&str> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        labels,
        [
            "strip=weighted_average",
            "strip=tmix",
            "strip=unlabeled_data",
            "strip=all"
        ]
    );

    ok(
        dir,
        &[
            "export",
            "--records",
            "plots/abl.csv",
            "--out",
            "again.json",
        ],
    );
    assert!(dir.join("again.json").exists());
}

#[test]
fn failures_have_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(mixtext(dir, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(mixtext(dir, &["train", "--mode"]).status.code(), Some(2));

    let out = mixtext(dir, &["train", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    fs::write(
        dir.join("bad.jsonl"),
        "{\"id\":\"a\",\"text\":\"x\",\"label\":\"p\"}\nnot json\n",
    )
    .unwrap();
    let out = mixtext(dir, &["prepare", "--corpus", "bad.jsonl", "--out", "p"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains(":2"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = mixtext(dir, &["export", "--records", "nope.json", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
}
