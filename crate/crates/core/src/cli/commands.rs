use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlKind, ControllerConfig};
use crate::evidence::DocumentRecord;
use crate::reward::{RewardBreakdown, RewardConfig};
use crate::rollout::{anneal_p, run_episode, sample_mode, AnnealSchedule, EpisodeTrace, Mode};
use crate::simenv::{generate_corpus, CorpusSpec, ScriptedAgent, SimCorpus, SimEnv, TaskRecord};

use super::{CliError, RunConfig};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const TASKS_FILE: &str = "tasks.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const CURVES_FILE: &str = "utility_curves.csv";

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| CliError::Config(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CliError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSummary {
    pub documents: usize,
    pub tasks: usize,
}

/// Generates the corpus and task files under `output_dir`.
pub fn cmd_corpus(cfg: &RunConfig) -> Result<CorpusSummary, CliError> {
    let (docs, tasks) = generate_corpus(&cfg.corpus)?;
    ensure_dir(&cfg.output_dir)?;
    write_jsonl(&cfg.output_dir.join(CORPUS_FILE), &docs)?;
    write_jsonl(&cfg.output_dir.join(TASKS_FILE), &tasks)?;
    Ok(CorpusSummary {
        documents: docs.len(),
        tasks: tasks.len(),
    })
}

pub fn load_corpus(dir: &Path) -> Result<(Vec<DocumentRecord>, Vec<TaskRecord>), CliError> {
    let docs = read_jsonl(&dir.join(CORPUS_FILE))?;
    let tasks = read_jsonl(&dir.join(TASKS_FILE))?;
    Ok((docs, tasks))
}

/// One scheduled episode. Plans depend only on the config, never on
/// worker timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodePlan {
    pub epoch: usize,
    pub index: usize,
    pub seed: u64,
    pub mode: Mode,
    pub task: usize,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

pub fn plan_episodes(
    schedule: &AnnealSchedule,
    episodes_per_epoch: usize,
    num_tasks: usize,
    seed: u64,
) -> Result<Vec<EpisodePlan>, CliError> {
    if num_tasks == 0 {
        return Err(CliError::Sim(crate::simenv::SimError::EmptyCorpus));
    }
    let mut plans = Vec::with_capacity(schedule.total_epochs() * episodes_per_epoch);
    for epoch in 0..schedule.total_epochs() {
        let p = anneal_p(schedule, epoch)?;
        let mut rng = epoch_rng(seed, epoch);
        for index in 0..episodes_per_epoch {
            let mode = sample_mode(p, &mut rng);
            plans.push(EpisodePlan {
                epoch,
                index,
                seed: rng.gen(),
                mode,
                task: rng.gen_range(0..num_tasks),
            });
        }
    }
    Ok(plans)
}

/// Runs `plans` in parallel; output order follows `plans`.
pub fn run_plans(
    cfg: &RunConfig,
    corpus: &SimCorpus,
    tasks: &[TaskRecord],
    plans: &[EpisodePlan],
) -> Result<Vec<EpisodeTrace>, CliError> {
    let ep = cfg.episode_config();
    plans
        .par_iter()
        .map(|plan| {
            let task = tasks
                .get(plan.task)
                .ok_or_else(|| CliError::Config(format!("task index {} out of range", plan.task)))?;
            let env = SimEnv::new(corpus, task, cfg.corpus.retrieval_k)?;
            let mut agent = ScriptedAgent::new(cfg.agent_profile);
            Ok(run_episode(&env, &mut agent, &ep, plan.mode, plan.epoch, plan.seed)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulateSummary {
    pub episodes: usize,
    pub controlled: usize,
    pub path: PathBuf,
}

/// Simulates every epoch of the schedule over the corpus in `output_dir`
/// and writes one trace line per episode.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateSummary, CliError> {
    cfg.validate()?;
    let (docs, tasks) = load_corpus(&cfg.output_dir)?;
    let corpus = SimCorpus::new(docs)?;
    let plans = plan_episodes(&cfg.schedule, cfg.episodes_per_epoch, tasks.len(), cfg.seed)?;
    let traces = run_plans(cfg, &corpus, &tasks, &plans)?;
    let path = cfg.output_dir.join(TRACES_FILE);
    write_jsonl(&path, &traces)?;
    Ok(SimulateSummary {
        episodes: traces.len(),
        controlled: traces.iter().filter(|t| t.mode == Mode::Controlled).count(),
        path,
    })
}

pub fn load_traces(path: &Path) -> Result<Vec<EpisodeTrace>, CliError> {
    read_jsonl(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub task_id: String,
    pub epoch: usize,
    pub mode: Mode,
    pub step: usize,
    pub novelty: f64,
    pub effectiveness: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMean {
    pub step: usize,
    pub count: usize,
    pub novelty: f64,
    pub effectiveness: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnalysisSummary {
    pub episodes: usize,
    pub rows: usize,
    pub per_step: Vec<StepMean>,
    pub stop_events: usize,
    pub continue_events: usize,
    pub expand_events: usize,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Analysis {
    pub rows: Vec<CurveRow>,
    pub summary: AnalysisSummary,
}

pub fn analyze(traces: &[EpisodeTrace]) -> Analysis {
    let mut rows = Vec::new();
    let mut summary = AnalysisSummary {
        episodes: traces.len(),
        ..AnalysisSummary::default()
    };
    for (episode, t) in traces.iter().enumerate() {
        for u in &t.utilities {
            rows.push(CurveRow {
                episode,
                task_id: t.task_id.clone(),
                epoch: t.epoch,
                mode: t.mode,
                step: u.search_index,
                novelty: u.score.novelty,
                effectiveness: u.score.effectiveness,
                utility: u.score.utility,
            });
        }
        for e in &t.control_events {
            match e.signal.kind {
                ControlKind::Stop => summary.stop_events += 1,
                ControlKind::ContinueOneStep => summary.continue_events += 1,
                ControlKind::Expand(_) => summary.expand_events += 1,
            }
        }
        summary.mean_reward += t.reward.total;
    }
    if !traces.is_empty() {
        summary.mean_reward /= traces.len() as f64;
    }
    let steps = rows.iter().map(|r| r.step + 1).max().unwrap_or(0);
    summary.per_step = (0..steps)
        .map(|step| {
            let at: Vec<&CurveRow> = rows.iter().filter(|r| r.step == step).collect();
            let n = at.len().max(1) as f64;
            StepMean {
                step,
                count: at.len(),
                novelty: at.iter().map(|r| r.novelty).sum::<f64>() / n,
                effectiveness: at.iter().map(|r| r.effectiveness).sum::<f64>() / n,
                utility: at.iter().map(|r| r.utility).sum::<f64>() / n,
            }
        })
        .collect();
    summary.rows = rows.len();
    Analysis { rows, summary }
}

/// Reads a trace file, writes the per-step curve table next to it (or to
/// `out`), and returns the analysis.
pub fn cmd_analyze(trace_path: &Path, out: Option<&Path>) -> Result<Analysis, CliError> {
    let traces = load_traces(trace_path)?;
    let analysis = analyze(&traces);
    let csv_path = match out {
        Some(dir) => {
            ensure_dir(dir)?;
            dir.join(CURVES_FILE)
        }
        None => trace_path.with_file_name(CURVES_FILE),
    };
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::Config(e.to_string()))?;
    if analysis.rows.is_empty() {
        w.write_record(["episode", "task_id", "epoch", "mode", "step", "novelty", "effectiveness", "utility"])
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    for row in &analysis.rows {
        w.serialize(row).map_err(|e| CliError::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    Ok(analysis)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardMismatch {
    /// 1-based line in the trace file.
    pub line: usize,
    pub task_id: String,
    pub recorded: RewardBreakdown,
    pub recomputed: RewardBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RewardAudit {
    pub episodes: usize,
    pub mismatches: Vec<RewardMismatch>,
    pub max_total: f64,
}

const AUDIT_TOL: f64 = 1e-12;

fn same_reward(a: &RewardBreakdown, b: &RewardBreakdown) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= AUDIT_TOL;
    close(a.f1, b.f1)
        && close(a.r_correct, b.r_correct)
        && close(a.r_penalty, b.r_penalty)
        && close(a.r_ret, b.r_ret)
        && close(a.total, b.total)
        && a.ceiling_applied == b.ceiling_applied
}

pub fn audit_rewards(traces: &[EpisodeTrace], cfg: &RewardConfig) -> RewardAudit {
    let mut audit = RewardAudit {
        episodes: traces.len(),
        max_total: f64::NEG_INFINITY,
        ..RewardAudit::default()
    };
    for (i, t) in traces.iter().enumerate() {
        let recomputed = t.recompute_reward(cfg);
        audit.max_total = audit.max_total.max(recomputed.total);
        if !same_reward(&t.reward, &recomputed) {
            audit.mismatches.push(RewardMismatch {
                line: i + 1,
                task_id: t.task_id.clone(),
                recorded: t.reward,
                recomputed,
            });
        }
    }
    if traces.is_empty() {
        audit.max_total = 0.0;
    }
    audit
}

/// Recomputes every episode reward from the raw trace fields.
pub fn cmd_reward(trace_path: &Path, cfg: &RewardConfig) -> Result<RewardAudit, CliError> {
    Ok(audit_rewards(&load_traces(trace_path)?, cfg))
}

/// Checks that the built-in defaults match the published constants.
/// Returns one line per disagreement.
pub fn selftest() -> Vec<String> {
    let mut bad = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if got != want {
            bad.push(format!("{name}: default {got}, expected {want}"));
        }
    };
    let c = ControllerConfig::default();
    check("rho", c.rho, 0.5);
    check("delta", c.delta, 0.2);
    check("m_stop", c.m_stop as f64, 2.0);
    check("m_cont", c.m_cont as f64, 1.0);
    check("eta", c.eta, 0.7);
    let r = RewardConfig::default();
    check("lambda_format", r.lambda_format, 0.1);
    check("lambda_penalty", r.lambda_penalty, 0.2);
    check("lambda_penalty_max", r.lambda_penalty_max, 0.4);
    check("lambda_ret", r.lambda_ret, 0.1);
    check("lambda_ceil", r.lambda_ceil, 0.9);
    let run = RunConfig::default();
    check("budget", run.budget as f64, 8.0);
    let stages: Vec<(usize, f64)> = run.schedule.stages.iter().map(|s| (s.epochs, s.p)).collect();
    if stages != [(2, 0.9), (1, 0.5), (1, 0.2), (1, 0.0)] {
        bad.push(format!("schedule: default {stages:?}"));
    }
    if CorpusSpec::default().validate().is_err() {
        bad.push("corpus: default spec is invalid".into());
    }
    bad
}
