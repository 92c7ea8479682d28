use std::path::PathBuf;
use std::process::Command;

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn kgtrav(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_kgtrav"))
        .args(args)
        .env_remove("KGTRAV_CONFIG")
        .output()
        .unwrap();
    (
        out.status.success(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn ask_with_a_transcript() {
    let kg = format!("memory:{}", fixture("movies.tsv"));
    let (ok, stdout, stderr) = kgtrav(&[
        "ask",
        "What actor played in both Inception and Interstellar?",
        "--kg",
        &kg,
        "--transcript",
        &fixture("movies.toml"),
    ]);
    assert!(ok, "{stderr}");
    assert_eq!(stdout.trim(), "Michael Caine");
}

#[test]
fn eval_writes_a_report_and_tree_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let kg = format!("memory:{}", fixture("movies.tsv"));
    let (ok, stdout, stderr) = kgtrav(&[
        "eval",
        "--dataset",
        &fixture("movies_qa.jsonl"),
        "--kg",
        &kg,
        "--transcript",
        &fixture("movies_qa.toml"),
        "--run-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(ok, "{stderr}");
    assert!(stdout.contains("EM-in 1.000"), "{stdout}");
    let run = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    assert!(run.join("report.json").is_file());
    assert_eq!(std::fs::read_dir(run.join("trees")).unwrap().count(), 3);
}

#[test]
fn unknown_kg_is_an_error() {
    let (ok, _, stderr) = kgtrav(&["ask", "q", "--kg", "freebase"]);
    assert!(!ok);
    assert!(stderr.contains("freebase"), "{stderr}");
}
