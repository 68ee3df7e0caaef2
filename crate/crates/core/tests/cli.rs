use std::fs;
use std::path::Path;
use std::process::Command;

use synthgen::acceptance::TOY_VOCAB;
use synthgen::cli::main_with_args;
use synthgen::graph::check_validity;
use synthgen::record::load_records;
use synthgen::vocabulary::Vocabulary;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_synthgen"))
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["synthgen"];
    argv.extend_from_slice(args);
    main_with_args(argv)
}

fn setup(dir: &Path) -> String {
    let vocab = dir.join("toy.toml");
    fs::write(&vocab, TOY_VOCAB).unwrap();
    vocab.display().to_string()
}

#[test]
fn usage_errors_exit_2() {
    let out = bin().args(["gen-dataset", "--out", "x.txt"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--vocab"));
    let out = bin().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let out = bin()
        .args(["validate-vocab", "--vocab", "/nonexistent/vocab.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn validate_vocab_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = setup(dir.path());
    let out = bin().args(["validate-vocab", "--vocab", &vocab]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("5 blocks"), "{text}");
    assert!(text.contains("\"command\": \"validate-vocab\""));
}

#[test]
fn gen_dataset_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = setup(dir.path());
    let path = |n: &str| dir.path().join(n).display().to_string();
    for (name, seed) in [("a.txt", "4"), ("b.txt", "4"), ("c.txt", "5")] {
        assert_eq!(
            run(&[
                "--seed",
                seed,
                "gen-dataset",
                "--vocab",
                &vocab,
                "--count",
                "20",
                "--out",
                &path(name)
            ]),
            0
        );
    }
    let a = fs::read(path("a.txt")).unwrap();
    assert_eq!(a, fs::read(path("b.txt")).unwrap());
    assert_ne!(a, fs::read(path("c.txt")).unwrap());

    let v = Vocabulary::from_toml_str(TOY_VOCAB).unwrap();
    let records = load_records(path("a.txt")).unwrap();
    assert_eq!(records.len(), 20);
    assert!(records
        .iter()
        .all(|r| check_validity(&r.graph, &v).is_valid() && r.coords.is_some()));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(path("a.txt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["command"], "gen-dataset");
    assert!(manifest["inputs"].to_string().contains("sha256"));
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = setup(dir.path());
    let path = |n: &str| dir.path().join(n).display().to_string();
    assert_eq!(
        run(&[
            "gen-dataset",
            "--vocab",
            &vocab,
            "--count",
            "30",
            "--out",
            &path("data.txt")
        ]),
        0
    );
    assert_eq!(
        run(&[
            "fit-tabular",
            "--vocab",
            &vocab,
            "--data",
            &path("data.txt"),
            "--epochs",
            "1",
            "--out",
            &path("m.json")
        ]),
        0
    );
    for (threads, out) in [("1", "s1.txt"), ("4", "s4.txt")] {
        let args = [
            "--threads",
            threads,
            "sample",
            "--vocab",
            &vocab,
            "--model",
            &path("m.json"),
            "--n-samples",
            "12",
            "--steps",
            "20",
            "--out",
            &path(out),
        ];
        assert_eq!(run(&args), 0);
    }
    assert_eq!(fs::read(path("s1.txt")).unwrap(), fs::read(path("s4.txt")).unwrap());
}

#[test]
fn config_file_is_strict() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = setup(dir.path());
    let path = |n: &str| dir.path().join(n).display().to_string();
    fs::write(path("good.toml"), "[gen-dataset]\ncount = 7\n").unwrap();
    fs::write(path("bad.toml"), "[gen-dataset]\ncount = 7\ncolour = 1\n").unwrap();
    assert_eq!(
        run(&[
            "--config",
            &path("good.toml"),
            "gen-dataset",
            "--vocab",
            &vocab,
            "--out",
            &path("g.txt")
        ]),
        0
    );
    assert_eq!(load_records(path("g.txt")).unwrap().len(), 7);
    assert_eq!(
        run(&[
            "--config",
            &path("bad.toml"),
            "gen-dataset",
            "--vocab",
            &vocab,
            "--out",
            &path("b.txt")
        ]),
        1
    );
    assert!(!Path::new(&path("b.txt")).exists());
}

#[test]
fn selftest_runs_selected_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("self.txt");
    assert_eq!(run(&["selftest", "--only", "6,7", "--out", out.to_str().unwrap()]), 0);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    assert!(text.contains("2/2 criteria passed"));
}
