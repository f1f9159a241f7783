use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn molrag(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_molrag"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn s(p: PathBuf) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn stats_after_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("kg");
    let o = molrag(&["ingest-kg", &s(fixture("tiny_kg.tsv")), "--out", snap.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{o:?}");
    let o = molrag(&["stats", "--kg", snap.to_str().unwrap()], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).lines().any(|l| l == "triplets: 3"), "{}", stdout(&o));
}

#[test]
fn annotation_snapshot_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("ann.tsv");
    let o = molrag(
        &["ingest-annotations", &s(fixture("mini_annotations.tsv")), "--out", snap.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success());
    let first = stdout(&o);
    let o = molrag(&["stats", "--annotations", snap.to_str().unwrap()], dir.path());
    let second = stdout(&o);
    let molecules = |t: &str| t.lines().find(|l| l.starts_with("molecules:")).unwrap().to_string();
    assert_eq!(molecules(&first), molecules(&second));
}

#[test]
fn query_prints_answer_and_writes_one_trace() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "query",
        "--smiles",
        "CCO",
        "--task",
        "dili",
        "--backend",
        "mock",
        "--script",
        &s(fixture("mock/all_yes.tsv")),
        "--kg",
        &s(fixture("mini_kg.tsv")),
        "--annotations",
        &s(fixture("mini_annotations.tsv")),
    ];
    let o = molrag(&args, dir.path());
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.starts_with("answer: YES\n"));
    let traces = std::fs::read_to_string(dir.path().join("traces.jsonl")).unwrap();
    assert_eq!(traces.lines().count(), 1);

    let id = text.lines().find_map(|l| l.strip_prefix("trace: ")).unwrap().split(' ').next().unwrap();
    let o = molrag(&["trace-show", id], dir.path());
    assert!(o.status.success());
    let shown: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(shown["trace_id"], id);
    assert_eq!(shown["calls"].as_array().unwrap().len(), 6);
}

fn eval_args(cache: &str) -> Vec<String> {
    [
        "eval",
        "--dataset",
        &s(fixture("dili_mini.tsv")),
        "--schema",
        "toxicity",
        "--task",
        "dili",
        "--backend",
        "mock",
        "--script",
        &s(fixture("mock/eval_dili.tsv")),
        "--kg",
        &s(fixture("mini_kg.tsv")),
        "--annotations",
        &s(fixture("mini_annotations.tsv")),
        "--tool-captions",
        &s(fixture("tool_captions.tsv")),
        "--cache-dir",
        cache,
        "--out",
        "results.tsv",
    ]
    .iter()
    .map(|a| a.to_string())
    .collect()
}

#[test]
fn eval_prints_macro_f1_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cache = s(dir.path().join("cache"));
    let args = eval_args(&cache);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let first = molrag(&args, dir.path());
    assert!(first.status.success(), "{first:?}");
    assert!(stdout(&first).contains("Macro-F1: 0.7333 (n=4, errors=0)"));
    let results = std::fs::read_to_string(dir.path().join("results.tsv")).unwrap();
    assert!(results.contains("value\t0.733333\n"));

    let second = molrag(&args, dir.path());
    assert_eq!(stdout(&first), stdout(&second));
    assert_eq!(results, std::fs::read_to_string(dir.path().join("results.tsv")).unwrap());
}

#[test]
fn config_file_supplies_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("molrag.toml");
    std::fs::write(
        &cfg,
        format!("[data]\nkg = {:?}\n\n[pipeline]\nk = 3\n", fixture("tiny_kg.tsv").to_str().unwrap()),
    )
    .unwrap();
    let o = molrag(&["stats", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(stdout(&o).contains("triplets: 3"));

    std::fs::write(&cfg, "[data]\nunknown_key = 1\n").unwrap();
    let o = molrag(&["stats", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(molrag(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(molrag(&["query", "--smiles", "CCO"], dir.path()).status.code(), Some(2));
    let o = molrag(&["stats", "--kg", "missing.tsv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
    assert!(o.stdout.is_empty());
}

#[test]
fn strict_eval_fails_on_errors() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("partial.tsv");
    // no prediction rule, so every example fails
    std::fs::write(&script, "provided description is enough\tAnswer = YES\\nREASON = r\n").unwrap();
    let mut args = eval_args(&s(dir.path().join("cache")));
    let i = args.iter().position(|a| a == "--script").unwrap();
    args[i + 1] = s(script);
    args.push("--strict".into());
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = molrag(&args, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("errors=4"));
}

#[test]
fn every_subcommand_documents_its_flags() {
    let dir = tempfile::tempdir().unwrap();
    let global = [
        "--config",
        "--backend",
        "--script",
        "--endpoint",
        "--model",
        "--k",
        "--path-cap",
        "--cache-dir",
        "--parallelism",
        "--strict",
    ];
    for (cmd, flags) in [
        ("ingest-kg", &["--out"][..]),
        ("ingest-annotations", &["--out"]),
        ("import-embeddings", &["--out"]),
        ("query", &["--smiles", "--task"]),
        ("eval", &["--dataset", "--schema", "--task", "--split-overlap", "--judge", "--out", "--captions-out"]),
        ("stats", &["--tasks"]),
        ("trace-show", &[]),
    ] {
        let o = molrag(&[cmd, "--help"], dir.path());
        assert!(o.status.success());
        let help = stdout(&o);
        for f in flags.iter().chain(&global) {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn import_embeddings_writes_normalized_table() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("vec.txt");
    std::fs::write(&src, "id 2\nDB00316 1.0 0\nDB00898 0 0\nDB00586 0.5 0.25\n").unwrap();
    let o = molrag(&["import-embeddings", src.to_str().unwrap(), "--out", "table.txt"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("vectors: 2\n") && text.contains("rejected: 1\n"));
    let written = std::fs::read_to_string(dir.path().join("table.txt")).unwrap();
    assert_eq!(written, "id 2\nDB00316 1 0\nDB00586 0.5 0.25\n");
}

#[test]
fn example_config_parses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../molrag.example.toml");
    let o = molrag(&["stats", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("triplets: 101\n"));
}
