use std::path::Path;
use std::process::{Command, Output};

pub fn etts(run: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etts"))
        .arg("--run")
        .arg(run)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("ETTS_CACHE_DIR")
        .output()
        .expect("binary runs")
}

pub fn ok(run: &Path, args: &[&str]) {
    let out = etts(run, args);
    assert!(
        out.status.success(),
        "etts {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Preprocess through train-stage2 on a freshly written synthetic corpus.
pub fn train_chain(run: &Path, corpus: &Path, utterances: usize, steps: usize) {
    let (manifest, alignments) = etts_core::corpus::synthetic::write_synthetic_corpus(corpus, utterances, 5).unwrap();
    ok(
        run,
        &[
            "--seed",
            "3",
            "preprocess",
            "--manifest",
            manifest.to_str().unwrap(),
            "--alignments",
            alignments.to_str().unwrap(),
        ],
    );
    let steps = steps.to_string();
    ok(
        run,
        &["train-stage1", "--preset", "toy", "--steps", &steps, "--batch-size", "4", "--lr", "3e-3", "--warmup", "50"],
    );
    ok(run, &["prune", "--pth", "0.7"]);
    ok(run, &["build-pairs"]);
    ok(run, &["train-stage2", "--epochs", "50"]);
}
