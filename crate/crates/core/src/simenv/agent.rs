use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::control::{parse_control, ControlKind};
use crate::evidence::{Edge, NodeId};
use crate::reward::normalize_answer;
use crate::rollout::{format_edges, ActionKind, Agent, AgentView, Proposal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    GreedyExpander,
    OverRetriever,
    PrematureStopper,
    Compliant,
}

impl Profile {
    pub const ALL: [Profile; 4] = [
        Profile::GreedyExpander,
        Profile::OverRetriever,
        Profile::PrematureStopper,
        Profile::Compliant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::GreedyExpander => "greedy_expander",
            Profile::OverRetriever => "over_retriever",
            Profile::PrematureStopper => "premature_stopper",
            Profile::Compliant => "compliant",
        }
    }

    /// Whether the profile follows control messages unless overridden.
    pub fn obeys_by_default(self) -> bool {
        matches!(self, Profile::Compliant | Profile::PrematureStopper)
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Profile::ALL
            .into_iter()
            .find(|p| p.as_str() == key || p.as_str().replace('_', "") == key)
            .ok_or_else(|| format!("unknown agent profile {s:?}"))
    }
}

/// Deterministic policy for one profile. Holds no state between calls, so
/// the same view always yields the same proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedAgent {
    pub profile: Profile,
    pub obey: bool,
}

impl ScriptedAgent {
    pub fn new(profile: Profile) -> Self {
        Self {
            profile,
            obey: profile.obeys_by_default(),
        }
    }

    pub fn with_obedience(mut self, obey: bool) -> Self {
        self.obey = obey;
        self
    }
}

impl Agent for ScriptedAgent {
    fn name(&self) -> String {
        if self.obey == self.profile.obeys_by_default() {
            self.profile.to_string()
        } else if self.obey {
            format!("{}+obey", self.profile)
        } else {
            format!("{}-ignore", self.profile)
        }
    }

    fn propose(&mut self, view: &AgentView<'_>) -> Proposal {
        scripted_action(self.profile, self.obey, view)
    }
}

/// Proposal of a scripted profile in `view`.
pub fn scripted_action(profile: Profile, obey: bool, view: &AgentView<'_>) -> Proposal {
    if obey {
        if let Some(kind) = view.control.and_then(|m| parse_control(m).ok()) {
            match kind {
                ControlKind::Stop => return answer(view, "told to stop"),
                ControlKind::ContinueOneStep => return retrieve(view, "told to keep searching"),
                ControlKind::Expand(ids) => {
                    if let Some(p) = expand_ids(view, &ids) {
                        return p;
                    }
                }
            }
        }
    }
    if view.retrievals.is_empty() {
        return retrieve(view, "start with the question");
    }
    match profile {
        Profile::OverRetriever => retrieve(view, "search again"),
        Profile::PrematureStopper => answer(view, "that should be enough"),
        Profile::GreedyExpander | Profile::Compliant => {
            if obey && view.directed_in_step {
                return answer(view, "directed expansion done");
            }
            let frontier = frontier(view);
            if frontier.is_empty() {
                answer(view, "nothing left to open")
            } else {
                Proposal::new("open the next layer", ActionKind::Expand(format_edges(&frontier)))
            }
        }
    }
}

/// Query for search `l`: the question, plus from the second search on one
/// token of the first search's top root title, cycling through its tokens.
pub fn rotating_query(view: &AgentView<'_>) -> String {
    let l = view.retrievals.len();
    let tokens: Vec<&str> = match view.retrievals.first().and_then(|r| r.trees.first()) {
        Some(top) if l > 0 => top.title().split_whitespace().collect(),
        _ => Vec::new(),
    };
    if tokens.is_empty() {
        return view.question.to_string();
    }
    format!("{} {}", view.question, tokens[(l - 1) % tokens.len()])
}

fn retrieve(view: &AgentView<'_>, thought: &str) -> Proposal {
    Proposal::new(thought, ActionKind::Retrieve(rotating_query(view)))
}

/// First candidate whose normalized tokens occur in the injected evidence,
/// otherwise the first candidate.
pub fn pick_answer(view: &AgentView<'_>) -> String {
    let evidence = format!(" {} ", normalize_answer(&view.ledger.injected_texts().join(" ")));
    let cands = view.candidates.candidates();
    cands
        .iter()
        .find(|c| {
            let n = normalize_answer(c);
            !n.is_empty() && evidence.contains(&format!(" {n} "))
        })
        .or_else(|| cands.first())
        .cloned()
        .unwrap_or_default()
}

fn answer(view: &AgentView<'_>, thought: &str) -> Proposal {
    Proposal::new(thought, ActionKind::Answer(pick_answer(view)))
}

/// Edges of the latest retrieval whose parent is injected and child is not.
fn frontier(view: &AgentView<'_>) -> Vec<Edge> {
    let Some(last) = view.retrievals.last() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for tree in &last.trees {
        for n in tree.nodes() {
            if let Some(p) = &n.parent_id {
                if view.ledger.is_injected(p) && !view.ledger.is_injected(&n.node_id) {
                    out.push((p.clone(), n.node_id.clone()));
                }
            }
        }
    }
    out
}

fn expand_ids(view: &AgentView<'_>, ids: &[NodeId]) -> Option<Proposal> {
    let last = view.retrievals.last()?;
    let edges: Vec<Edge> = ids
        .iter()
        .filter_map(|id| {
            last.trees
                .iter()
                .find_map(|t| t.node(id))
                .and_then(|n| n.parent_id.clone().map(|p| (p, id.clone())))
        })
        .collect();
    if edges.is_empty() {
        return None;
    }
    Some(Proposal::new("follow the directive", ActionKind::Expand(format_edges(&edges))))
}
