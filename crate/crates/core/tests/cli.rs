use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "nodes_per_class=20",
    "--set",
    "edges_per_class=10",
    "--set",
    "feature_dim=6",
    "--set",
    "hidden=8",
    "--set",
    "heads=2",
    "--set",
    "head_dim=4",
    "--set",
    "latent_dim=4",
    "--set",
    "vba_hidden=8",
    "--set",
    "proj_dim=4",
    "--set",
    "epochs=3",
    "--set",
    "select_every=1",
    "--set",
    "probe_epochs=20",
];

fn bhygnn(args: &[&str], extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bhygnn"))
        .args(args)
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_is_reproducible_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = bhygnn(&["generate", "--seed", "3", "--out", s(d)], SMALL);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for f in [
        "structure.txt",
        "node_features.txt",
        "labels.txt",
        "manifest.txt",
        "provenance.txt",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let bad = bhygnn(
        &[
            "generate",
            "--set",
            "edge_size=0",
            "--out",
            s(&dir.path().join("c")),
        ],
        &[],
    );
    assert_ne!(bad.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(bhygnn(&["frobnicate"], &[]).status.code(), Some(1));
    assert_eq!(
        bhygnn(&["stats", "--set", "colour=blue"], &[])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        bhygnn(&["stats", "--set", "no-equals-sign"], &[])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    assert_eq!(bhygnn(&["stats", s(&missing)], &[]).status.code(), Some(2));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = bhygnn(
        &[
            "train",
            "--out",
            s(dir.path()),
            "--set",
            "lr=1e300",
            "--set",
            "mode=supervised",
        ],
        SMALL,
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn stats_reports_homophily() {
    let out = bhygnn(&["stats"], SMALL);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("mean h(v)") && text.contains("mean h(e) 0.3333"),
        "{text}"
    );
}

#[test]
fn train_embed_probe_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = bhygnn(&["train", "--out", s(&run)], SMALL);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "config.txt",
        "trace.csv",
        "model.bhg",
        "embeddings.txt",
        "report.txt",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let trace = std::fs::read_to_string(run.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 4);

    let emb = dir.path().join("emb");
    let ckpt = format!("checkpoint={}", s(&run.join("model.bhg")));
    let out = bhygnn(&["embed", "--out", s(&emb), "--set", &ckpt], SMALL);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        std::fs::read(emb.join("embeddings.txt")).unwrap(),
        std::fs::read(run.join("embeddings.txt")).unwrap()
    );

    let probe = dir.path().join("probe");
    let e = format!("embeddings={}", s(&emb.join("embeddings.txt")));
    let out = bhygnn(&["probe", "--out", s(&probe), "--set", &e], SMALL);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8(out.stdout).unwrap().contains("test="));
}

#[test]
fn resolved_config_is_echoed_and_reloadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    assert_eq!(
        bhygnn(&["generate", "--out", s(&a)], SMALL).status.code(),
        Some(0)
    );
    let b = dir.path().join("b");
    let cfg = a.join("config.txt");
    assert_eq!(
        bhygnn(&["generate", "--config", s(&cfg), "--out", s(&b)], &[])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        std::fs::read(a.join("structure.txt")).unwrap(),
        std::fs::read(b.join("structure.txt")).unwrap()
    );
    assert_eq!(
        std::fs::read(&cfg).unwrap(),
        std::fs::read(b.join("config.txt")).unwrap()
    );
}

#[test]
fn run_experiment_writes_per_seed_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = bhygnn(
        &[
            "run-experiment",
            "--out",
            s(dir.path()),
            "--set",
            "repeats=2",
        ],
        SMALL,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(report.contains("# test mean"));
    for seed in [0, 1] {
        assert!(dir.path().join(format!("seed-{seed}/trace.csv")).exists());
    }
}
