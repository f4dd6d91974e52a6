use std::fs;
use std::path::Path;
use std::process::Command;

use infoctl::cli::{
    cmd_analyze, cmd_corpus, cmd_reward, cmd_simulate, load_corpus, load_traces, CliError, RunConfig,
    CORPUS_FILE, CURVES_FILE, TASKS_FILE, TRACES_FILE,
};
use infoctl::control::ControlKind;
use infoctl::rollout::{EpisodeTrace, Mode};

fn config(dir: &Path, episodes: usize) -> RunConfig {
    RunConfig {
        output_dir: dir.to_path_buf(),
        episodes_per_epoch: episodes,
        ..RunConfig::default()
    }
}

fn simulate(dir: &Path, episodes: usize) -> RunConfig {
    let cfg = config(dir, episodes);
    cmd_corpus(&cfg).unwrap();
    cmd_simulate(&cfg).unwrap();
    cfg
}

#[test]
fn corpus_files_round_trip_and_repeat() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = cmd_corpus(&config(a.path(), 1)).unwrap();
    cmd_corpus(&config(b.path(), 1)).unwrap();
    let (docs, tasks) = load_corpus(a.path()).unwrap();
    assert_eq!((docs.len(), tasks.len()), (s.documents, s.tasks));
    for f in [CORPUS_FILE, TASKS_FILE] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn zero_documents_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 1);
    cfg.corpus.num_docs = 0;
    assert!(matches!(cmd_corpus(&cfg), Err(CliError::Sim(_))));
}

#[test]
fn simulate_runs_every_epoch_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulate(dir.path(), 12);
    let first = fs::read(dir.path().join(TRACES_FILE)).unwrap();
    let traces = load_traces(&dir.path().join(TRACES_FILE)).unwrap();
    assert_eq!(traces.len(), 5 * 12);
    let last: Vec<&EpisodeTrace> = traces.iter().filter(|t| t.epoch == 4).collect();
    assert_eq!(last.len(), 12);
    assert!(last.iter().all(|t| t.mode == Mode::Free && t.control_events.is_empty()));
    cmd_simulate(&cfg).unwrap();
    assert_eq!(first, fs::read(dir.path().join(TRACES_FILE)).unwrap());
}

#[test]
fn simulate_without_corpus_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(cmd_simulate(&config(dir.path(), 2)), Err(CliError::Io { .. })));
}

#[test]
fn analyze_emits_one_row_per_closed_step() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 6);
    let path = dir.path().join(TRACES_FILE);
    let traces = load_traces(&path).unwrap();
    let a = cmd_analyze(&path, None).unwrap();
    let total: usize = traces.iter().map(|t| t.utilities.len()).sum();
    assert_eq!(a.rows.len(), total);
    assert_eq!(a.summary.per_step.iter().map(|s| s.count).sum::<usize>(), total);
    let stops = traces
        .iter()
        .flat_map(|t| &t.control_events)
        .filter(|e| e.signal.kind == ControlKind::Stop)
        .count();
    assert_eq!(a.summary.stop_events, stops);
    let csv = fs::read_to_string(dir.path().join(CURVES_FILE)).unwrap();
    assert_eq!(csv.lines().count(), total + 1);
}

#[test]
fn analyze_empty_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(TRACES_FILE);
    fs::write(&path, "").unwrap();
    let a = cmd_analyze(&path, None).unwrap();
    assert!(a.rows.is_empty());
    assert_eq!(a.summary.episodes, 0);
    let csv = fs::read_to_string(dir.path().join(CURVES_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn malformed_trace_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(TRACES_FILE);
    fs::write(&path, "{\"task_id\": 3}\n").unwrap();
    match cmd_analyze(&path, None) {
        Err(CliError::Malformed { line, .. }) => assert_eq!(line, 1),
        other => panic!("expected malformed, got {other:?}"),
    }
}

#[test]
fn reward_audit_finds_exactly_the_corrupted_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulate(dir.path(), 4);
    let path = dir.path().join(TRACES_FILE);
    let fresh = cmd_reward(&path, &cfg.reward).unwrap();
    assert!(fresh.mismatches.is_empty());
    assert!(fresh.max_total <= 1.0);

    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut v: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
    let total = v["reward"]["total"].as_f64().unwrap();
    v["reward"]["total"] = serde_json::json!(total + 0.25);
    lines[2] = serde_json::to_string(&v).unwrap();
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let audit = cmd_reward(&path, &cfg.reward).unwrap();
    assert_eq!(audit.mismatches.len(), 1);
    assert_eq!(audit.mismatches[0].line, 3);
}

#[test]
fn perfect_answers_never_exceed_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulate(dir.path(), 8);
    let traces = load_traces(&dir.path().join(TRACES_FILE)).unwrap();
    assert!(traces.iter().any(|t| t.reward.f1 == 1.0));
    for t in traces.iter().filter(|t| t.reward.f1 == 1.0) {
        assert!(t.recompute_reward(&cfg.reward).total <= 1.0);
    }
}

fn infoctl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_infoctl"))
        .args(args)
        .env_remove("INFOCTL_SEED")
        .env_remove("INFOCTL_OUTPUT_DIR")
        .output()
        .unwrap()
}

#[test]
fn binary_reports_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "budget = \"eight\"\n").unwrap();
    let out = infoctl(&["--config", bad.to_str().unwrap(), "corpus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn binary_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    for cmd in ["corpus", "simulate", "analyze", "reward", "selftest"] {
        let out = infoctl(&["--out", out_dir, "--episodes", "3", "--seed", "11", cmd]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let traces = load_traces(&dir.path().join(TRACES_FILE)).unwrap();
    assert_eq!(traces.len(), 15);
}
