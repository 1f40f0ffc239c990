use std::path::{Path, PathBuf};
use std::process::Command;

use layerforge::cli;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["layerforge"];
    full.extend_from_slice(args);
    let code = cli::run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    emb: PathBuf,
    outcomes: PathBuf,
}

fn fixture(users: &str, signal: &[&str]) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let syn = root.join("syn");
    let mut args = vec![
        "synth",
        "--users",
        users,
        "--layers",
        "6",
        "--hidden",
        "16",
        "--noise-sigma",
        "0.3",
    ];
    for sig in signal {
        args.extend(["--signal", sig]);
    }
    args.extend(["--seed", "3", "--out", s(&syn)]);
    let (code, _, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    Fixture {
        emb: syn.join("corpus.ule"),
        outcomes: syn.join("corpus.outcomes.csv"),
        _dir: dir,
        root,
    }
}

#[test]
fn synth_writes_all_artifacts() {
    let f = fixture("50", &["2:1"]);
    let syn = f.root.join("syn");
    for name in [
        "corpus.ule",
        "corpus.ule.manifest",
        "corpus.outcomes.csv",
        "corpus.truth.txt",
        "corpus.truth.bin",
        "config.txt",
    ] {
        assert!(syn.join(name).exists(), "{name}");
    }
    let truth = std::fs::read_to_string(syn.join("corpus.truth.txt")).unwrap();
    assert!(truth.contains("bayes_mse=0.09"));
}

#[test]
fn validate_reports_clean_corpus() {
    let f = fixture("30", &["2:1"]);
    let (code, out, _) = run(&["validate", "--embeddings", s(&f.emb), "--outcomes", s(&f.outcomes)]);
    assert_eq!(code, 0);
    assert!(out.starts_with("ok: 30 users"));
}

#[test]
fn validate_names_users_missing_outcomes() {
    let f = fixture("30", &["2:1"]);
    let text = std::fs::read_to_string(&f.outcomes).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with("u00007,")).collect();
    std::fs::write(&f.outcomes, kept.join("\n") + "\n").unwrap();
    let (code, out, _) = run(&["validate", "--embeddings", s(&f.emb), "--outcomes", s(&f.outcomes)]);
    assert_eq!(code, 1);
    assert!(out.contains("u00007"), "{out}");
}

#[test]
fn truncated_file_is_a_format_error_with_offset() {
    let f = fixture("30", &["2:1"]);
    let bytes = std::fs::read(&f.emb).unwrap();
    std::fs::write(&f.emb, &bytes[..bytes.len() - 10]).unwrap();
    let (code, _, err) = run(&["validate", "--embeddings", s(&f.emb), "--outcomes", s(&f.outcomes)]);
    assert_eq!(code, 2);
    assert!(err.contains("offset"), "{err}");
}

#[test]
fn usage_errors_exit_three() {
    assert_eq!(run(&["select", "--embeddings", "x"]).0, 3);
    assert_eq!(run(&["frobnicate"]).0, 3);
    let f = fixture("30", &["2:1"]);
    let out = f.root.join("o");
    let (code, _, err) = run(&[
        "sweep-layers",
        "--embeddings",
        s(&f.emb),
        "--outcomes",
        s(&f.outcomes),
        "--k",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 3, "{err}");
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn sweep_select_and_final_produce_reports() {
    let f = fixture("200", &["2:0.6", "5:0.4"]);
    let base = ["--embeddings", s(&f.emb), "--outcomes", s(&f.outcomes)];

    let sweep = f.root.join("sweep");
    let (code, out, err) = run(&[&["sweep-layers"][..], &base, &["--out", s(&sweep)]].concat());
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("best single layer: 2"), "{out}");
    let csv = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("layer,mean_mse,std_err"));

    let sel = f.root.join("sel");
    let (code, out, err) = run(&[&["select"][..], &base, &["--out", s(&sel)]].concat());
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("recommended layers: 2;5"), "{out}");
    for name in [
        "trace.csv",
        "trace.txt",
        "recommendation.txt",
        "summary.txt",
        "config.txt",
    ] {
        assert!(sel.join(name).exists(), "{name}");
    }
    let config = std::fs::read_to_string(sel.join("config.txt")).unwrap();
    assert!(config.contains("subcommand=select\n") && config.contains("epsilon=0\n"));

    let test = f.root.join("test");
    let (code, _, _) = run(&[
        "synth",
        "--users",
        "100",
        "--layers",
        "6",
        "--hidden",
        "16",
        "--signal",
        "2:0.6",
        "--signal",
        "5:0.4",
        "--noise-sigma",
        "0.3",
        "--seed",
        "99",
        "--prefix",
        "t",
        "--out",
        s(&test),
    ]);
    assert_eq!(code, 0);
    let fin = f.root.join("fin");
    let (code, out, err) = run(&[
        "final",
        "--train-embeddings",
        s(&f.emb),
        "--train-outcomes",
        s(&f.outcomes),
        "--test-embeddings",
        s(&test.join("corpus.ule")),
        "--test-outcomes",
        s(&test.join("corpus.outcomes.csv")),
        "--layers",
        "2;5",
        "--out",
        s(&fin),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("L2+5 → r_dis "), "{out}");
    let preds = std::fs::read_to_string(fin.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 101);

    // The same predictions as a baseline: every paired difference is zero.
    let fin2 = f.root.join("fin2");
    let (code, _, err) = run(&[
        "final",
        "--train-embeddings",
        s(&f.emb),
        "--train-outcomes",
        s(&f.outcomes),
        "--test-embeddings",
        s(&test.join("corpus.ule")),
        "--test-outcomes",
        s(&test.join("corpus.outcomes.csv")),
        "--layers",
        "2;5",
        "--baseline-predictions",
        s(&fin.join("predictions.csv")),
        "--out",
        s(&fin2),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(fin2.join("final.txt")).unwrap();
    assert!(text.contains("p=1"), "{text}");
}

#[test]
fn select_is_byte_deterministic_across_thread_counts() {
    let f = fixture("120", &["2:1"]);
    let mut traces = Vec::new();
    for threads in ["1", "4"] {
        let out = f.root.join(format!("sel{threads}"));
        let (code, _, err) = run(&[
            "--threads",
            threads,
            "select",
            "--embeddings",
            s(&f.emb),
            "--outcomes",
            s(&f.outcomes),
            "--out",
            s(&out),
        ]);
        assert_eq!(code, 0, "{err}");
        traces.push(std::fs::read(out.join("trace.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn binary_exit_codes_and_thread_env() {
    let f = fixture("40", &["2:1"]);
    let bin = env!("CARGO_BIN_EXE_layerforge");
    let status = Command::new(bin)
        .args(["validate", "--embeddings", s(&f.emb), "--outcomes", s(&f.outcomes)])
        .env("LAYERFORGE_THREADS", "2")
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    let status = Command::new(bin)
        .args(["validate", "--embeddings", s(&f.emb), "--outcomes", s(&f.outcomes)])
        .env("LAYERFORGE_THREADS", "0")
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(3));
    let rt = f.root.join("rt.ule");
    let out = Command::new(bin)
        .args(["roundtrip", "--embeddings", s(&f.emb), "--out", s(&rt)])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("identical"));
}
