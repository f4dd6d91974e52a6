//! Episode runner. An agent proposes actions against an environment; the
//! runner executes them, segments search steps, computes step utilities,
//! and in controlled mode injects control signals at search-step
//! boundaries. Every episode produces an [`EpisodeTrace`].

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    derive_expansion_plan, score_leaves, should_continue, should_stop,
    ControlKind, ControlSignal, ControllerConfig,
};
use crate::evidence::{leaf_pool, Edge, InjectedLedger, LeafPool, LedgerError, NodeId, RetrievalOutput};
use crate::reward::{total_reward, RewardBreakdown, RewardConfig};
use crate::utility::{
    answer_distribution, effectiveness, novelty, utility, AnswerDistribution, AnswerScorer,
    CandidateSet, Conditioning, Embedder, UtilityError, UtilityScore,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Controlled,
    Free,
}

/// Controlled with probability `p`.
pub fn sample_mode<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Mode {
    if rng.gen::<f64>() < p {
        Mode::Controlled
    } else {
        Mode::Free
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealStage {
    pub epochs: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub stages: Vec<AnnealStage>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("epoch {epoch} is past the end of a {total}-epoch schedule")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("invalid schedule: {0}")]
    Invalid(String),
}

impl Default for AnnealSchedule {
    /// 0.9, 0.5, 0.2, 0 for 2, 1, 1, 1 epochs.
    fn default() -> Self {
        let stage = |epochs, p| AnnealStage { epochs, p };
        Self {
            stages: vec![stage(2, 0.9), stage(1, 0.5), stage(1, 0.2), stage(1, 0.0)],
        }
    }
}

impl AnnealSchedule {
    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.stages.is_empty() {
            return Err(ScheduleError::Invalid("no stages".into()));
        }
        for s in &self.stages {
            if s.epochs == 0 || !(0.0..=1.0).contains(&s.p) {
                return Err(ScheduleError::Invalid(format!("bad stage {s:?}")));
            }
        }
        Ok(())
    }
}

pub fn anneal_p(schedule: &AnnealSchedule, epoch: usize) -> Result<f64, ScheduleError> {
    let mut start = 0;
    for stage in &schedule.stages {
        if epoch < start + stage.epochs {
            return Ok(stage.p);
        }
        start += stage.epochs;
    }
    Err(ScheduleError::EpochOutOfRange {
        epoch,
        total: start,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ActionKind {
    Retrieve(String),
    /// Edge list in the form `parent->child, parent->child`.
    Expand(String),
    Answer(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub step: usize,
    pub thought: String,
    #[serde(flatten)]
    pub kind: ActionKind,
}

/// What an agent hands back before the runner assigns a step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub thought: String,
    pub kind: ActionKind,
}

impl Proposal {
    pub fn new(thought: impl Into<String>, kind: ActionKind) -> Self {
        Self {
            thought: thought.into(),
            kind,
        }
    }
}

pub fn format_edges(edges: &[Edge]) -> String {
    edges
        .iter()
        .map(|(p, c)| format!("{p}->{c}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed edge list: {0:?}")]
pub struct EdgeParseError(pub String);

pub fn parse_edges(raw: &str) -> Result<Vec<Edge>, EdgeParseError> {
    let bad = || EdgeParseError(raw.to_string());
    let mut out = Vec::new();
    for part in raw.split(',') {
        let (p, c) = part.split_once("->").ok_or_else(bad)?;
        let (p, c) = (p.trim(), c.trim());
        let valid = |s: &str| !s.is_empty() && !s.contains(char::is_whitespace) && !s.contains("->");
        if !valid(p) || !valid(c) {
            return Err(bad());
        }
        out.push((NodeId::from(p), NodeId::from(c)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SearchStep {
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SegmentError {
    #[error("expand action at step {0} precedes the first retrieval")]
    ExpandBeforeFirstRetrieve(usize),
}

/// One segment per retrieval: it starts at the retrieval and runs until the
/// step before the next retrieval, or the last action.
pub fn segment_search_steps(actions: &[Action]) -> Result<Vec<SearchStep>, SegmentError> {
    let mut out: Vec<SearchStep> = Vec::new();
    for a in actions {
        match a.kind {
            ActionKind::Retrieve(_) => {
                if let Some(last) = out.last_mut() {
                    last.end = a.step - 1;
                }
                out.push(SearchStep {
                    index: out.len(),
                    start: a.step,
                    end: a.step,
                });
            }
            ActionKind::Expand(_) if out.is_empty() => {
                return Err(SegmentError::ExpandBeforeFirstRetrieve(a.step))
            }
            _ => {}
        }
    }
    if let (Some(last), Some(a)) = (out.last_mut(), actions.last()) {
        last.end = a.step;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MalformedToolCall,
    UnknownTarget,
    ParentNotInjected,
    ControlNonCompliance,
    BudgetOverrun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepUtility {
    pub search_index: usize,
    #[serde(flatten)]
    pub score: UtilityScore,
    pub net_injected: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlEvent {
    pub step: usize,
    pub signal: ControlSignal,
    pub message: String,
    /// `None` when the episode ended before the agent responded.
    pub complied: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedNode {
    pub step: usize,
    pub node_id: NodeId,
    pub text: String,
}

/// Full record of one episode. Field names are read back by the analyzer
/// and the reward auditor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub task_id: String,
    pub mode: Mode,
    pub epoch: usize,
    pub seed: u64,
    pub agent: String,
    pub gold: String,
    pub actions: Vec<Action>,
    pub search_steps: Vec<SearchStep>,
    pub utilities: Vec<StepUtility>,
    pub control_events: Vec<ControlEvent>,
    pub violations: Vec<Violation>,
    pub injected: Vec<InjectedNode>,
    pub reward: RewardBreakdown,
}

impl EpisodeTrace {
    /// Text of the last answer action, if any.
    pub fn answer(&self) -> Option<&str> {
        self.actions.iter().rev().find_map(|a| match &a.kind {
            ActionKind::Answer(t) => Some(t.as_str()),
            _ => None,
        })
    }

    /// Recomputes the reward from the raw trace fields.
    pub fn recompute_reward(&self, cfg: &RewardConfig) -> RewardBreakdown {
        let texts: Vec<&str> = self.injected.iter().map(|n| n.text.as_str()).collect();
        total_reward(self.answer(), &self.gold, self.violations.len(), &texts, cfg)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("environment failure: {0}")]
pub struct EnvironmentError(pub String);

/// Task, search engine, and scoring back-ends for one episode.
pub trait Environment {
    fn task_id(&self) -> &str;
    fn question(&self) -> &str;
    fn gold(&self) -> &str;
    fn candidates(&self) -> &CandidateSet;
    /// Fixed reasoning trace used when scoring candidate answers.
    fn canned_trace(&self) -> &str;
    fn retrieve(&self, query: &str, search_index: usize) -> Result<RetrievalOutput, EnvironmentError>;
    fn embedder(&self) -> &dyn Embedder;
    fn scorer(&self) -> &dyn AnswerScorer;
}

/// Read-only view handed to the agent at each decision.
pub struct AgentView<'a> {
    pub step: usize,
    pub budget: usize,
    pub question: &'a str,
    pub candidates: &'a CandidateSet,
    /// Rendered control message injected since the agent last acted.
    pub control: Option<&'a str>,
    pub retrievals: &'a [RetrievalOutput],
    pub ledger: &'a InjectedLedger,
    /// Actions executed so far in the current search step, retrieval
    /// included.
    pub actions_in_step: usize,
    /// Whether an expand directive arrived during the current search step.
    pub directed_in_step: bool,
}

pub trait Agent {
    fn name(&self) -> String;
    fn propose(&mut self, view: &AgentView<'_>) -> Proposal;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub controller: ControllerConfig,
    pub reward: RewardConfig,
    pub budget: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            controller: ControllerConfig::default(),
            reward: RewardConfig::default(),
            budget: 8,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RolloutError {
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("budget must be at least 1")]
    ZeroBudget,
}

/// Runner-side state visible to violation checks.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub mode: Mode,
    pub ledger: InjectedLedger,
    pub utility_history: Vec<UtilityScore>,
    pub pending_control: Option<ControlSignal>,
    pub actions_taken: usize,
    pub open_step: bool,
}

impl EpisodeState {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            ledger: InjectedLedger::new(),
            utility_history: Vec::new(),
            pending_control: None,
            actions_taken: 0,
            open_step: false,
        }
    }
}

/// Whether `action` obeys `signal`. `None` means the action neither obeys
/// nor breaks it (the directive stays pending).
pub fn complies(signal: &ControlKind, action: &ActionKind) -> Option<bool> {
    match (signal, action) {
        (ControlKind::Stop, ActionKind::Retrieve(_)) => Some(false),
        (ControlKind::Stop, ActionKind::Answer(_)) => Some(true),
        (ControlKind::Stop, ActionKind::Expand(_)) => None,
        (ControlKind::ContinueOneStep, ActionKind::Retrieve(_)) => Some(true),
        (ControlKind::ContinueOneStep, ActionKind::Answer(_)) => Some(false),
        (ControlKind::ContinueOneStep, ActionKind::Expand(_)) => None,
        (ControlKind::Expand(ids), ActionKind::Expand(raw)) => Some(match parse_edges(raw) {
            Ok(edges) => {
                let children: BTreeSet<&NodeId> = edges.iter().map(|(_, c)| c).collect();
                ids.iter().all(|id| children.contains(id))
            }
            Err(_) => false,
        }),
        (ControlKind::Expand(_), _) => Some(false),
    }
}

/// Violations caused by executing `action` in `state`. Does not mutate.
pub fn detect_violations(action: &Action, state: &EpisodeState) -> Vec<Violation> {
    let mut out = Vec::new();
    let v = |kind| Violation {
        step: action.step,
        kind,
    };
    match &action.kind {
        ActionKind::Retrieve(q) if q.trim().is_empty() => out.push(v(ViolationKind::MalformedToolCall)),
        ActionKind::Expand(raw) => match parse_edges(raw) {
            Err(_) => out.push(v(ViolationKind::MalformedToolCall)),
            Ok(_) if !state.open_step => out.push(v(ViolationKind::MalformedToolCall)),
            Ok(edges) => {
                for e in &edges {
                    match state.ledger.check_edge(e) {
                        Ok(()) => {}
                        Err(LedgerError::UnknownEdge(_)) => out.push(v(ViolationKind::UnknownTarget)),
                        Err(_) => out.push(v(ViolationKind::ParentNotInjected)),
                    }
                }
            }
        },
        _ => {}
    }
    if let Some(sig) = &state.pending_control {
        if complies(&sig.kind, &action.kind) == Some(false) {
            out.push(v(ViolationKind::ControlNonCompliance));
        }
    }
    out
}

struct OpenStep {
    index: usize,
    start: usize,
}

/// Undo information for a step closed at a proposal that was then
/// replaced by an expansion.
struct ClosedMark {
    index: usize,
    start: usize,
    prior_len: usize,
    prev: Option<AnswerDistribution>,
}

struct Runner<'e> {
    env: &'e dyn Environment,
    cfg: EpisodeConfig,
    state: EpisodeState,
    retrievals: Vec<RetrievalOutput>,
    actions: Vec<Action>,
    utilities: Vec<StepUtility>,
    prior_pool: LeafPool,
    prev_dist: Option<AnswerDistribution>,
    last_dist: Option<AnswerDistribution>,
    open: Option<OpenStep>,
    plan_layers: VecDeque<BTreeSet<Edge>>,
    directed_in_step: bool,
    continue_used: bool,
    stop_issued: bool,
    events: Vec<ControlEvent>,
    open_event: Option<usize>,
    violations: Vec<Violation>,
}

impl<'e> Runner<'e> {
    fn conditioning(&self, evidence: Vec<String>) -> Conditioning {
        Conditioning {
            task: self.env.question().to_string(),
            evidence,
            trace: self.env.canned_trace().to_string(),
        }
    }

    fn baseline(&self) -> Result<AnswerDistribution, RolloutError> {
        Ok(answer_distribution(
            self.env.scorer(),
            &self.conditioning(Vec::new()),
            self.env.candidates(),
            None,
        )?)
    }

    /// Closes the open search step at `t_end` and records its utility.
    fn close_step(&mut self, t_end: usize) -> Result<Option<ClosedMark>, RolloutError> {
        let Some(open) = self.open.take() else {
            return Ok(None);
        };
        let mark = ClosedMark {
            index: open.index,
            start: open.start,
            prior_len: self.prior_pool.len(),
            prev: self.prev_dist.clone(),
        };
        let pool = leaf_pool(&self.retrievals[open.index]);
        let cc = &self.cfg.controller;
        let nov = if pool.is_empty() {
            0.0
        } else {
            novelty(&pool, &self.prior_pool, cc.k_nn, self.env.embedder())?
        };
        let prev = match self.prev_dist.take() {
            Some(d) => d,
            None => self.baseline()?,
        };
        let evidence = self.state.ledger.texts_up_to(t_end);
        let dist = answer_distribution(
            self.env.scorer(),
            &self.conditioning(evidence),
            self.env.candidates(),
            Some(open.index),
        )?;
        let eff = effectiveness(&dist, &prev)?;
        let score = utility(nov, eff, cc.rho)?;
        let net = self.state.ledger.net_injected(open.start, t_end)?.len();
        self.utilities.push(StepUtility {
            search_index: open.index,
            score,
            net_injected: net,
            degenerate: dist.degenerate,
        });
        self.state.utility_history.push(score);
        self.prior_pool.extend_unique(&pool);
        self.prev_dist = Some(dist.clone());
        self.last_dist = Some(dist);
        self.plan_layers.clear();
        self.state.open_step = false;
        Ok(Some(mark))
    }

    fn reopen(&mut self, mark: ClosedMark) {
        self.utilities.pop();
        self.state.utility_history.pop();
        self.prior_pool.leaves.truncate(mark.prior_len);
        self.prev_dist = mark.prev;
        self.last_dist = None;
        self.open = Some(OpenStep {
            index: mark.index,
            start: mark.start,
        });
        self.state.open_step = true;
    }

    fn issue(&mut self, kind: ControlKind, at: usize) {
        if let Some(i) = self.open_event.take() {
            // superseded before the agent answered it
            self.events[i].complied.get_or_insert(false);
        }
        let signal = ControlSignal::new(kind, at);
        self.events.push(ControlEvent {
            step: at,
            message: signal.render(),
            signal: signal.clone(),
            complied: None,
        });
        self.open_event = Some(self.events.len() - 1);
        self.state.pending_control = Some(signal);
    }

    /// Control decision when a search step closes at a proposal.
    fn boundary_signal(&self, proposal: &ActionKind) -> Option<ControlKind> {
        let cc = &self.cfg.controller;
        let history = &self.state.utility_history;
        let stop_now = should_stop(history, cc).is_some();
        match proposal {
            ActionKind::Retrieve(_) if stop_now && !self.stop_issued => Some(ControlKind::Stop),
            ActionKind::Answer(_) if !stop_now && !self.continue_used => {
                let dist = self.last_dist.as_ref()?;
                match should_continue(dist, self.env.candidates(), history, cc) {
                    Ok(true) => Some(ControlKind::ContinueOneStep),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    fn plan_after_retrieval(&mut self, output: &RetrievalOutput) {
        let emb = self.env.embedder();
        let pool = leaf_pool(output);
        let query = emb.embed(&output.query);
        let scores = score_leaves(&pool, &self.prior_pool, &query, &self.cfg.controller, emb);
        let plan = derive_expansion_plan(&output.trees, &scores, &self.cfg.controller);
        self.plan_layers = plan.per_step_edges.into_iter().collect();
    }

    /// Next directive from the plan: edges whose parent is injected and
    /// whose child is not yet.
    fn next_directive(&mut self) -> Option<ControlKind> {
        while let Some(layer) = self.plan_layers.pop_front() {
            let ledger = &self.state.ledger;
            let ids: Vec<NodeId> = layer
                .iter()
                .filter(|(p, c)| ledger.is_injected(p) && !ledger.is_injected(c))
                .map(|(_, c)| c.clone())
                .collect();
            if !ids.is_empty() {
                return Some(ControlKind::Expand(ids));
            }
            if layer.iter().any(|(p, _)| !ledger.is_injected(p)) {
                // the agent did not open the previous layer
                self.plan_layers.clear();
            }
        }
        None
    }

    fn view<'a>(&'a self, step: usize, control: Option<&'a str>) -> AgentView<'a> {
        let actions_in_step = match &self.open {
            Some(o) => step - o.start,
            None => 0,
        };
        AgentView {
            step,
            budget: self.cfg.budget,
            question: self.env.question(),
            candidates: self.env.candidates(),
            control,
            retrievals: &self.retrievals,
            ledger: &self.state.ledger,
            actions_in_step,
            directed_in_step: self.directed_in_step,
        }
    }

    fn resolve_pending(&mut self, action: &ActionKind) {
        let Some(sig) = self.state.pending_control.clone() else {
            return;
        };
        let verdict = complies(&sig.kind, action);
        if let Some(i) = self.open_event {
            if let Some(v) = verdict {
                self.events[i].complied.get_or_insert(v);
            }
        }
        let keep = match sig.kind {
            // stays in context until the agent answers
            ControlKind::Stop => !matches!(action, ActionKind::Answer(_)),
            ControlKind::ContinueOneStep => verdict.is_none(),
            ControlKind::Expand(_) => false,
        };
        if verdict.is_some() {
            self.open_event = None;
        }
        if !keep {
            self.state.pending_control = None;
        }
    }
}

/// Runs one episode to completion.
pub fn run_episode(
    env: &dyn Environment,
    agent: &mut dyn Agent,
    cfg: &EpisodeConfig,
    mode: Mode,
    epoch: usize,
    seed: u64,
) -> Result<EpisodeTrace, RolloutError> {
    if cfg.budget == 0 {
        return Err(RolloutError::ZeroBudget);
    }
    let controlled = mode == Mode::Controlled;
    let mut r = Runner {
        env,
        cfg: *cfg,
        state: EpisodeState::new(mode),
        retrievals: Vec::new(),
        actions: Vec::new(),
        utilities: Vec::new(),
        prior_pool: LeafPool::default(),
        prev_dist: None,
        last_dist: None,
        open: None,
        plan_layers: VecDeque::new(),
        directed_in_step: false,
        continue_used: false,
        stop_issued: false,
        events: Vec::new(),
        open_event: None,
        violations: Vec::new(),
    };
    let mut answered = false;

    for t in 0..cfg.budget {
        let msg = r.state.pending_control.as_ref().map(ControlSignal::render);
        let mut proposal = agent.propose(&r.view(t, msg.as_deref()));

        let closes = matches!(proposal.kind, ActionKind::Retrieve(_) | ActionKind::Answer(_));
        if closes && r.open.is_some() {
            let mark = r.close_step(t - 1)?;
            let signal = if controlled {
                r.boundary_signal(&proposal.kind)
            } else {
                None
            };
            if let Some(kind) = signal {
                match kind {
                    ControlKind::Stop => r.stop_issued = true,
                    ControlKind::ContinueOneStep => r.continue_used = true,
                    ControlKind::Expand(_) => {}
                }
                r.issue(kind, t);
                let msg = r.state.pending_control.as_ref().map(ControlSignal::render);
                proposal = agent.propose(&r.view(t, msg.as_deref()));
                if matches!(proposal.kind, ActionKind::Expand(_)) {
                    if let Some(mark) = mark {
                        r.reopen(mark);
                    }
                }
            }
        }

        let action = Action {
            step: t,
            thought: proposal.thought,
            kind: proposal.kind,
        };
        let found = detect_violations(&action, &r.state);
        r.violations.extend(found);
        r.resolve_pending(&action.kind);

        match &action.kind {
            ActionKind::Retrieve(query) => {
                let l = r.retrievals.len();
                let output = env.retrieve(query, l)?;
                r.state.ledger.inject_roots(&output, t)?;
                r.open = Some(OpenStep { index: l, start: t });
                r.state.open_step = true;
                r.directed_in_step = false;
                if controlled {
                    r.plan_after_retrieval(&output);
                }
                r.retrievals.push(output);
                if controlled {
                    if let Some(kind) = r.next_directive() {
                        r.directed_in_step = true;
                        r.issue(kind, t + 1);
                    }
                }
            }
            ActionKind::Expand(raw) => {
                let edges = if r.open.is_some() {
                    parse_edges(raw).unwrap_or_default()
                } else {
                    Vec::new()
                };
                r.state.ledger.apply_expansion(&edges, t)?;
                if controlled && r.open.is_some() {
                    if let Some(kind) = r.next_directive() {
                        r.directed_in_step = true;
                        r.issue(kind, t + 1);
                    }
                }
            }
            ActionKind::Answer(_) => {
                r.state.ledger.carry(t)?;
                answered = true;
            }
        }
        r.actions.push(action);
        r.state.actions_taken = t + 1;
        if answered {
            break;
        }
    }

    let last = r.actions.last().map(|a| a.step).unwrap_or(0);
    r.close_step(last)?;

    if !answered {
        // one more proposal reveals whether the agent tried to keep going
        let msg = r.state.pending_control.as_ref().map(ControlSignal::render);
        let _ = agent.propose(&r.view(cfg.budget, msg.as_deref()));
        r.violations.push(Violation {
            step: cfg.budget,
            kind: ViolationKind::BudgetOverrun,
        });
    }

    let search_steps = search_steps_of(&r.actions);
    let injected: Vec<InjectedNode> = r
        .state
        .ledger
        .entries()
        .iter()
        .map(|(step, id)| InjectedNode {
            step: *step,
            node_id: id.clone(),
            text: r.state.ledger.text_of(id).unwrap_or_default().to_string(),
        })
        .collect();
    let mut trace = EpisodeTrace {
        task_id: env.task_id().to_string(),
        mode,
        epoch,
        seed,
        agent: agent.name(),
        gold: env.gold().to_string(),
        actions: r.actions,
        search_steps,
        utilities: r.utilities,
        control_events: r.events,
        violations: r.violations,
        injected,
        reward: RewardBreakdown::default(),
    };
    trace.reward = trace.recompute_reward(&cfg.reward);
    Ok(trace)
}

/// Segments, skipping expansions that precede the first retrieval (those
/// are recorded as violations instead).
fn search_steps_of(actions: &[Action]) -> Vec<SearchStep> {
    let first = actions
        .iter()
        .position(|a| matches!(a.kind, ActionKind::Retrieve(_)))
        .unwrap_or(actions.len());
    segment_search_steps(&actions[first..]).unwrap_or_default()
}
