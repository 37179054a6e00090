use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn noisegate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisegate"))
        .args(args)
        .env_remove("NOISEGATE_RUNS_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn record(text: &str, task: &str, value: &str) -> String {
    format!(
        r#"{{"text":"{text}","task":"{task}","words":[{{"features":[0.1,{value},0.3]}},{{"features":[0.2,0.1,0.0]}}]}}"#
    )
}

const SMALL_RUN: &str = r#"
seed = 3
samples = 2
[control]
kind = "uninformative"
n_sentences = 10
readers = 2
vocab_size = 12
feature_dim = 8
[model]
d_model = 8
n_heads = 2
n_layers_enc = 1
n_layers_dec = 1
d_ff = 16
max_len = 16
[train]
epochs = 2
[decode]
max_len = 10
"#;

#[test]
fn ingest_filters_and_merges() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("sr.jsonl");
    let b = dir.path().join("nr.jsonl");
    fs::write(
        &a,
        [record("the cat", "SR1", "0.5"), record("a dog", "SR1", "null")].join("\n"),
    )
    .unwrap();
    fs::write(&b, record("she ran", "NR1", "0.7")).unwrap();
    let out = dir.path().join("merged.jsonl");

    let run = noisegate(&[
        "ingest",
        "--in",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let text = stdout(&run);
    assert!(text.contains("SR1,1,1"), "{text}");
    assert!(text.contains("NR1,1,0"), "{text}");
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 2);
}

#[test]
fn ingest_names_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = dir.path().join("out.jsonl");
    let run = noisegate(&["ingest", "--in", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("missing.jsonl"));

    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, "{not json").unwrap();
    let run = noisegate(&["ingest", "--in", broken.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    let err = stderr(&run);
    assert!(err.contains("broken.jsonl") && err.contains("line 1"), "{err}");
}

#[test]
fn dry_run_lists_cells_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, SMALL_RUN).unwrap();
    let run = noisegate(&["matrix", "--config", config.to_str().unwrap(), "--dry-run", "--seed", "9"]);
    assert!(run.status.success(), "{}", stderr(&run));
    let text = stdout(&run);
    for key in [
        "signal_signal_free_running",
        "noise_noise_teacher_forced",
        "signal_noise_teacher_forced",
    ] {
        assert!(text.contains(key), "{key} missing from\n{text}");
    }
    assert!(text.contains("split = 9"));
    assert!(text.contains("eval_noise = "));
    assert!(!dir.path().join("runs").exists());
}

fn run_small(dir: &Path, run_id: &str) -> Output {
    let config = dir.join("run.toml");
    fs::write(&config, SMALL_RUN).unwrap();
    noisegate(&[
        "matrix",
        "--config",
        config.to_str().unwrap(),
        "--run-id",
        run_id,
        "--out-dir",
        dir.join("runs").to_str().unwrap(),
    ])
}

#[test]
fn matrix_writes_run_and_report_rerenders() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_small(dir.path(), "fixed");
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(stdout(&run).contains("# Signal vs noise evaluation"));

    let run_dir = dir.path().join("runs/fixed");
    for file in ["config.json", "vocab.json", "report.json", "report.md", "report.csv", "model_signal.bin", "model_noise.bin"] {
        assert!(run_dir.join(file).exists(), "{file} missing");
    }
    assert_eq!(fs::read_dir(run_dir.join("cells")).unwrap().count(), 8);

    let csv = noisegate(&["report", "--run-dir", run_dir.to_str().unwrap(), "--format", "csv"]);
    assert!(csv.status.success());
    assert_eq!(stdout(&csv), fs::read_to_string(run_dir.join("report.csv")).unwrap());
    let md = noisegate(&["report", "--run-dir", run_dir.to_str().unwrap()]);
    assert_eq!(stdout(&md), fs::read_to_string(run_dir.join("report.md")).unwrap());
}

#[test]
fn runs_dir_env_sets_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, SMALL_RUN).unwrap();
    let root = dir.path().join("elsewhere");
    let run = Command::new(env!("CARGO_BIN_EXE_noisegate"))
        .args(["matrix", "--config", config.to_str().unwrap(), "--run-id", "env", "--epochs", "1"])
        .env("NOISEGATE_RUNS_DIR", &root)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(root.join("env/report.csv").exists());
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, SMALL_RUN.replace("epochs = 2", "epochs = 2\nlearning_rate = 1e12")).unwrap();
    let run = noisegate(&[
        "matrix",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        dir.path().join("runs").to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(2), "{}", stderr(&run));
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "[data]\ncorpora = [\"absent.jsonl\"]\n").unwrap();
    let run = noisegate(&["matrix", "--config", config.to_str().unwrap(), "--dry-run"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("absent.jsonl"));
}

#[test]
fn score_prints_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let hyp = dir.path().join("hyp.txt");
    let reference = dir.path().join("ref.txt");
    fs::write(&hyp, "the cat sat down\na dog ran\n").unwrap();
    fs::write(&reference, "the cat sat down\na dog ran\n").unwrap();
    let run = noisegate(&["score", "--hyp", hyp.to_str().unwrap(), "--ref", reference.to_str().unwrap()]);
    assert!(run.status.success(), "{}", stderr(&run));
    let text = stdout(&run);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("bleu1,"));
    assert!(lines[1].starts_with("100.0"), "{}", lines[1]);

    fs::write(&reference, "only one line\n").unwrap();
    let run = noisegate(&["score", "--hyp", hyp.to_str().unwrap(), "--ref", reference.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn shipped_desk_config_is_valid() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let run = noisegate(&["matrix", "--config", config.to_str().unwrap(), "--dry-run"]);
    assert!(run.status.success(), "{}", stderr(&run));
}
