//! Control decisions from utility histories and answer beliefs: stopping,
//! forced continuation, and utility-guided expansion targets. Signals are
//! rendered as fixed `<control>` messages.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{Edge, EvidenceTree, LeafPool, NodeId};
use crate::utility::{
    leaf_novelty, AnswerDistribution, CandidateSet, Embedder, EmbeddingVector, UtilityScore,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub rho: f64,
    pub delta: f64,
    pub m_stop: usize,
    pub m_cont: usize,
    pub eta: f64,
    pub k_expand: usize,
    pub k_nn: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            delta: 0.2,
            m_stop: 2,
            m_cont: 1,
            eta: 0.7,
            k_expand: 3,
            k_nn: 3,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = (0.0..=1.0).contains(&self.rho)
            && self.m_stop >= 1
            && self.m_cont >= 1
            && self.eta > 0.0
            && self.eta <= 1.0
            && self.k_nn >= 1;
        if ok {
            Ok(())
        } else {
            Err(format!("invalid controller config: {self:?}"))
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("continuation check needs a gold candidate")]
    MissingGold,
    #[error("continuation check needs {needed} utilities, have {have}")]
    InsufficientHistory { needed: usize, have: usize },
    #[error("distribution has {dist} entries but there are {candidates} candidates")]
    Misaligned { dist: usize, candidates: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "expand_ids", rename_all = "snake_case")]
pub enum ControlKind {
    Stop,
    ContinueOneStep,
    Expand(Vec<NodeId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlSignal {
    #[serde(flatten)]
    pub kind: ControlKind,
    pub issued_at: usize,
}

impl ControlSignal {
    pub fn new(kind: ControlKind, issued_at: usize) -> Self {
        Self { kind, issued_at }
    }

    pub fn render(&self) -> String {
        render_control(&self.kind)
    }
}

/// First index `l >= m_stop - 1` whose trailing window of `m_stop`
/// utilities lies entirely below `delta`.
pub fn stop_index(utilities: &[f64], delta: f64, m_stop: usize) -> Option<usize> {
    let m_stop = m_stop.max(1);
    let mut run = 0usize;
    for (l, &u) in utilities.iter().enumerate() {
        if u < delta {
            run += 1;
            if run >= m_stop {
                return Some(l);
            }
        } else {
            run = 0;
        }
    }
    None
}

pub fn should_stop(history: &[UtilityScore], cfg: &ControllerConfig) -> Option<usize> {
    let values: Vec<f64> = history.iter().map(|u| u.utility).collect();
    stop_index(&values, cfg.delta, cfg.m_stop)
}

/// The continuation trigger: the gold answer is not yet believed
/// (`P(gold) < eta * max P`) while the last `m_cont` utilities all reach
/// `delta`.
pub fn should_continue(
    dist: &AnswerDistribution,
    candidates: &CandidateSet,
    history: &[UtilityScore],
    cfg: &ControllerConfig,
) -> Result<bool, ControlError> {
    let gold = candidates.gold_index().ok_or(ControlError::MissingGold)?;
    if dist.probs.len() != candidates.len() {
        return Err(ControlError::Misaligned {
            dist: dist.probs.len(),
            candidates: candidates.len(),
        });
    }
    if history.len() < cfg.m_cont {
        return Err(ControlError::InsufficientHistory {
            needed: cfg.m_cont,
            have: history.len(),
        });
    }
    let not_believed = dist.probs[gold] < cfg.eta * dist.max_prob();
    let recent_high = history[history.len() - cfg.m_cont..]
        .iter()
        .all(|u| u.utility >= cfg.delta);
    Ok(not_believed && recent_high)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafScore {
    pub node_id: NodeId,
    pub score: f64,
}

/// Per-leaf utility proxy: `rho * novelty(v) + (1 - rho) * relevance(v)`,
/// where relevance is the clamped cosine to the query.
pub fn score_leaves(
    pool: &LeafPool,
    prior_pool: &LeafPool,
    query_embedding: &EmbeddingVector,
    cfg: &ControllerConfig,
    embedder: &dyn Embedder,
) -> Vec<LeafScore> {
    let prior: Vec<EmbeddingVector> = prior_pool
        .leaves
        .iter()
        .map(|l| embedder.embed(&l.text))
        .collect();
    pool.leaves
        .iter()
        .map(|leaf| {
            let v = embedder.embed(&leaf.text);
            let novelty = leaf_novelty(&v, &prior, cfg.k_nn);
            let relevance = v.cosine(query_embedding).clamp(0.0, 1.0);
            LeafScore {
                node_id: leaf.node_id.clone(),
                score: cfg.rho * novelty + (1.0 - cfg.rho) * relevance,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPlan {
    pub target_leaves: Vec<NodeId>,
    pub target_set: BTreeSet<NodeId>,
    /// One edge batch per depth layer below the roots, shallowest first.
    pub per_step_edges: Vec<BTreeSet<Edge>>,
}

impl ExpansionPlan {
    pub fn is_empty(&self) -> bool {
        self.target_leaves.is_empty()
    }
}

/// Ranking used for leaf selection: score descending, then tree order,
/// then node id ascending.
pub fn leaf_order(a: (f64, usize, &NodeId), b: (f64, usize, &NodeId)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.cmp(&b.1))
        .then_with(|| a.2.cmp(b.2))
}

/// Selects the top `k_expand` leaves and traces them up to their roots,
/// grouping the edges on the way into one batch per depth layer.
pub fn derive_expansion_plan<T: AsRef<EvidenceTree>>(
    trees: &[T],
    scores: &[LeafScore],
    cfg: &ControllerConfig,
) -> ExpansionPlan {
    if cfg.k_expand == 0 {
        return ExpansionPlan::default();
    }
    let lookup: HashMap<&NodeId, f64> = scores.iter().map(|s| (&s.node_id, s.score)).collect();

    let mut seen = HashSet::new();
    let mut ranked: Vec<(f64, usize, &NodeId)> = Vec::new();
    for (ti, tree) in trees.iter().enumerate() {
        for leaf in tree.as_ref().leaves() {
            if seen.insert(&leaf.node_id) {
                let s = lookup.get(&leaf.node_id).copied().unwrap_or(f64::NEG_INFINITY);
                ranked.push((s, ti, &leaf.node_id));
            }
        }
    }
    ranked.sort_by(|a, b| leaf_order(*a, *b));
    ranked.truncate(cfg.k_expand);

    let mut target_set = BTreeSet::new();
    let mut layers: BTreeMap<u32, BTreeSet<Edge>> = BTreeMap::new();
    for &(_, ti, id) in &ranked {
        let tree = trees[ti].as_ref();
        let mut cur = tree.node(id);
        while let Some(node) = cur {
            if !target_set.insert(node.node_id.clone()) {
                break;
            }
            match &node.parent_id {
                Some(p) => {
                    layers
                        .entry(node.level)
                        .or_default()
                        .insert((p.clone(), node.node_id.clone()));
                    cur = tree.node(p);
                }
                None => cur = None,
            }
        }
    }

    ExpansionPlan {
        target_leaves: ranked.iter().map(|&(_, _, id)| id.clone()).collect(),
        target_set,
        per_step_edges: layers.into_values().collect(),
    }
}

pub const STOP_MESSAGE: &str = "<control>Stop searching</control>";
pub const CONTINUE_MESSAGE: &str = "<control>Continue the search for one additional step</control>";
const EXPAND_PREFIX: &str = "<control>Expand the retrieved documents: [";
const EXPAND_SUFFIX: &str = "]</control>";

pub fn render_control(kind: &ControlKind) -> String {
    match kind {
        ControlKind::Stop => STOP_MESSAGE.to_string(),
        ControlKind::ContinueOneStep => CONTINUE_MESSAGE.to_string(),
        ControlKind::Expand(ids) => {
            let list = ids.iter().map(NodeId::as_str).collect::<Vec<_>>().join(", ");
            format!("{EXPAND_PREFIX}{list}{EXPAND_SUFFIX}")
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("not a control message: {0:?}")]
pub struct ParseControlError(pub String);

pub fn parse_control(message: &str) -> Result<ControlKind, ParseControlError> {
    let message = message.trim();
    match message {
        STOP_MESSAGE => return Ok(ControlKind::Stop),
        CONTINUE_MESSAGE => return Ok(ControlKind::ContinueOneStep),
        _ => {}
    }
    let inner = message
        .strip_prefix(EXPAND_PREFIX)
        .and_then(|m| m.strip_suffix(EXPAND_SUFFIX))
        .ok_or_else(|| ParseControlError(message.to_string()))?;
    let ids: Vec<NodeId> = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(NodeId::from)
        .collect();
    if ids.is_empty() {
        return Err(ParseControlError(message.to_string()));
    }
    Ok(ControlKind::Expand(ids))
}
