use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use capdrop::corpus::{load_captions, FeatureStore, Vocabulary};
use capdrop::metrics::CSV_HEADER;

fn capdrop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capdrop"))
        .args(args)
        .output()
        .expect("spawn capdrop")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, images: &str) {
    ok(&capdrop(&[
        "synth",
        "--seed",
        "3",
        "--images",
        images,
        "--out-dir",
        p(dir),
    ]));
}

fn train(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let ckpt = dir.join("model.ndcp");
    let (caps, feats, vocab) = (
        dir.join("captions.jsonl"),
        dir.join("features.imft"),
        dir.join("vocab.txt"),
    );
    let mut args = vec![
        "train",
        "--captions",
        p(&caps),
        "--features",
        p(&feats),
        "--vocab",
        p(&vocab),
        "--d-t",
        "0.2",
        "--seed",
        "1",
        "--hidden",
        "16",
        "--embed-dim",
        "8",
        "--batch",
        "10",
        "--epochs",
        "3",
        "--lr",
        "0.01",
        "--out",
        p(&ckpt),
    ];
    args.extend_from_slice(extra);
    ok(&capdrop(&args));
    ckpt
}

fn generate(dir: &Path, ckpt: &Path, d_e: &str, seed: &str) -> String {
    ok(&capdrop(&[
        "generate",
        "--checkpoint",
        p(ckpt),
        "--features",
        p(&dir.join("features.imft")),
        "--vocab",
        p(&dir.join("vocab.txt")),
        "--d-e",
        d_e,
        "--seed",
        seed,
    ]))
}

#[test]
fn synth_writes_loadable_corpus() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "7");
    let caps = load_captions(&dir.path().join("captions.jsonl")).unwrap();
    let feats = FeatureStore::load(&dir.path().join("features.imft")).unwrap();
    let vocab = Vocabulary::load(&dir.path().join("vocab.txt")).unwrap();
    assert_eq!(caps.len(), 35);
    assert_eq!(feats.len(), 7);
    assert!(caps.iter().all(|c| feats.contains(&c.image_id)));
    assert!(caps
        .iter()
        .flat_map(|c| &c.tokens)
        .all(|w| vocab.id(w).is_some()));

    let again = tempfile::tempdir().unwrap();
    synth(again.path(), "7");
    for name in ["captions.jsonl", "features.imft", "vocab.txt"] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(again.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn build_vocab_matches_synth_vocab() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "9");
    let out = dir.path().join("v2.txt");
    ok(&capdrop(&[
        "build-vocab",
        "--captions",
        p(&dir.path().join("captions.jsonl")),
        "--out",
        p(&out),
    ]));
    assert_eq!(
        fs::read(&out).unwrap(),
        fs::read(dir.path().join("vocab.txt")).unwrap()
    );

    ok(&capdrop(&[
        "build-vocab",
        "--captions",
        p(&dir.path().join("captions.jsonl")),
        "--out",
        p(&out),
        "--size",
        "5",
    ]));
    assert_eq!(Vocabulary::load(&out).unwrap().content_len(), 5);
}

#[test]
fn train_generate_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "12");
    let ckpt = train(dir.path(), &[]);

    let clean_a = generate(dir.path(), &ckpt, "0", "1");
    let clean_b = generate(dir.path(), &ckpt, "0", "999");
    assert_eq!(clean_a, clean_b, "d_e = 0 must not depend on the seed");
    assert_eq!(clean_a.lines().count(), 12);
    for line in clean_a.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = v.as_object().unwrap();
        assert_eq!(obj.len(), 3);
        assert!(obj["image_id"].is_string());
        assert!(obj["caption"].is_string());
        assert!(obj["exceeded"].is_boolean());
    }

    let noisy_a = generate(dir.path(), &ckpt, "0.6", "4");
    let noisy_b = generate(dir.path(), &ckpt, "0.6", "4");
    assert_eq!(noisy_a, noisy_b);

    let gen = dir.path().join("gen.jsonl");
    fs::write(&gen, &noisy_a).unwrap();
    let csv = ok(&capdrop(&[
        "evaluate",
        "--generated",
        p(&gen),
        "--captions",
        p(&dir.path().join("captions.jsonl")),
        "--vocab",
        p(&dir.path().join("vocab.txt")),
        "--d-t",
        "0.2",
        "--d-e",
        "0.6",
    ]));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_HEADER);
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&fields[..2], ["0.20", "0.60"]);
    let bleu: f64 = fields[2].parse().unwrap();
    assert!((0.0..=100.0).contains(&bleu));
}

#[test]
fn training_is_reproducible_and_thread_option_works() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "6");
    let a = fs::read(train(dir.path(), &[])).unwrap();
    let b = fs::read(train(dir.path(), &[])).unwrap();
    assert_eq!(a, b);
    let c = fs::read(train(
        dir.path(),
        &["--threads", "2", "--clip", "5", "--train-embeddings"],
    ))
    .unwrap();
    assert_eq!(&c[..4], b"NDCP");
}

#[test]
fn usage_and_parameter_errors_exit_1() {
    assert_eq!(capdrop(&["train"]).status.code(), Some(1));
    assert_eq!(capdrop(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        capdrop(&["gradcheck", "--hidden", "x"]).status.code(),
        Some(1)
    );

    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    let ckpt = train(dir.path(), &[]);
    let out = capdrop(&[
        "generate",
        "--checkpoint",
        p(&ckpt),
        "--features",
        p(&dir.path().join("features.imft")),
        "--vocab",
        p(&dir.path().join("vocab.txt")),
        "--d-e",
        "0.99",
        "--seed",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(capdrop(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    let missing = dir.path().join("missing.jsonl");
    let out = capdrop(&[
        "build-vocab",
        "--captions",
        p(&missing),
        "--out",
        p(&dir.path().join("v")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"image_id\": \"x\"}\n").unwrap();
    let out = capdrop(&[
        "build-vocab",
        "--captions",
        p(&bad),
        "--out",
        p(&dir.path().join("v")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    // captions for an image with no feature vector
    let orphan = dir.path().join("orphan.jsonl");
    fs::write(
        &orphan,
        "{\"image_id\": \"nowhere\", \"caption\": \"a red cat\"}\n",
    )
    .unwrap();
    let out = capdrop(&[
        "train",
        "--captions",
        p(&orphan),
        "--features",
        p(&dir.path().join("features.imft")),
        "--vocab",
        p(&dir.path().join("vocab.txt")),
        "--d-t",
        "0",
        "--seed",
        "0",
        "--epochs",
        "1",
        "--hidden",
        "4",
        "--embed-dim",
        "4",
        "--out",
        p(&dir.path().join("m.ndcp")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

#[test]
fn gradcheck_reports_error() {
    let out = ok(&capdrop(&["gradcheck"]));
    let last = out.lines().last().unwrap();
    let value: f64 = last
        .strip_prefix("max_relative_error=")
        .unwrap()
        .parse()
        .unwrap();
    assert!(value < 1e-4);
}

#[test]
fn small_sweep_writes_report_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    fs::write(
        &config,
        r#"
d_t = [0.0]
d_e = [0.0, 0.8]
seeds_per_cell = 2

[data]
kind = "synthetic"
seed = 2
train_images = 10
val_images = 4

[train]
hidden_dim = 8
embed_dim = 8
epochs = 2
batch_size = 10
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let stdout = ok(&capdrop(&[
        "sweep",
        "--config",
        p(&config),
        "--out-dir",
        p(&out_dir),
    ]));
    let report = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(stdout, report);
    assert_eq!(report.lines().count(), 3);
    for name in ["0.00_0.00.txt", "0.00_0.80.txt"] {
        let samples = fs::read_to_string(out_dir.join("samples").join(name)).unwrap();
        assert_eq!(samples.lines().count(), 8);
    }
    assert!(out_dir.join("train_log.csv").exists());
    assert!(out_dir.join("config.toml").exists());

    fs::write(&config, "d_e = [1.5]\n").unwrap();
    let out = capdrop(&["sweep", "--config", p(&config), "--out-dir", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
}
