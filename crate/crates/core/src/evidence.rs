//! Hierarchical evidence trees and the injected-node ledger.
//!
//! A retrieved source is a rooted tree of evidence units at increasing
//! resolution. The agent initially sees only the roots; expansion actions
//! reveal children along tree edges. The [`InjectedLedger`] records which
//! nodes have entered the agent context and at which primitive step.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Corpus-wide unique node identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// A directed hierarchy edge `(parent, child)`.
pub type Edge = (NodeId, NodeId);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("document {doc_id} has no nodes")]
    Empty { doc_id: String },
    #[error("document {doc_id}: duplicate node id {node}")]
    DuplicateNode { doc_id: String, node: NodeId },
    #[error("document {doc_id}: node {node} references missing parent {parent}")]
    DanglingParent {
        doc_id: String,
        node: NodeId,
        parent: NodeId,
    },
    #[error("document {doc_id}: multiple roots ({roots:?})")]
    MultipleRoots { doc_id: String, roots: Vec<NodeId> },
    #[error("document {doc_id}: parent chain contains a cycle at {node}")]
    CycleDetected { doc_id: String, node: NodeId },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("step {step} is not after the last recorded step {last}")]
    NonMonotoneStep { step: usize, last: usize },
    #[error("parent {} of edge ({}, {}) is not injected", .0.0, .0.0, .0.1)]
    ParentNotInjected(Edge),
    #[error("edge ({}, {}) is not part of any retrieved tree", .0.0, .0.1)]
    UnknownEdge(Edge),
    #[error("no snapshot recorded for step {0}")]
    MissingSnapshot(usize),
}

/// On-disk node record. Field names are part of the corpus file contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: NodeId,
    pub parent_id: Option<NodeId>,
    pub level: u32,
    pub title: String,
    pub text: String,
}

/// One line of the corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub title: String,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceNode {
    pub node_id: NodeId,
    pub parent_id: Option<NodeId>,
    pub level: u32,
    pub title: String,
    pub text: String,
    pub is_leaf: bool,
}

/// A validated rooted tree. Nodes are stored in the order of the source
/// record; `children` preserves that order as well.
#[derive(Debug, Clone)]
pub struct EvidenceTree {
    doc_id: String,
    title: String,
    nodes: Vec<EvidenceNode>,
    edges: BTreeSet<Edge>,
    index: HashMap<NodeId, usize>,
    children: Vec<Vec<usize>>,
    root: usize,
}

impl PartialEq for EvidenceTree {
    fn eq(&self, other: &Self) -> bool {
        self.doc_id == other.doc_id
            && self.title == other.title
            && self.nodes == other.nodes
            && self.edges == other.edges
    }
}

/// Validates a corpus record and materializes the tree. Levels are
/// recomputed from the parent chain; the recorded `level` is ignored.
pub fn build_tree(record: &DocumentRecord) -> Result<EvidenceTree, TreeError> {
    let doc_id = record.doc_id.clone();
    if record.nodes.is_empty() {
        return Err(TreeError::Empty { doc_id });
    }

    let mut index = HashMap::with_capacity(record.nodes.len());
    for (i, n) in record.nodes.iter().enumerate() {
        if index.insert(n.node_id.clone(), i).is_some() {
            return Err(TreeError::DuplicateNode {
                doc_id,
                node: n.node_id.clone(),
            });
        }
    }

    let mut children = vec![Vec::new(); record.nodes.len()];
    let mut roots = Vec::new();
    for (i, n) in record.nodes.iter().enumerate() {
        match &n.parent_id {
            None => roots.push(i),
            Some(p) => match index.get(p) {
                Some(&pi) => children[pi].push(i),
                None => {
                    return Err(TreeError::DanglingParent {
                        doc_id,
                        node: n.node_id.clone(),
                        parent: p.clone(),
                    })
                }
            },
        }
    }

    let root = match roots.as_slice() {
        // Every node has a parent, so following parents must loop.
        [] => {
            return Err(TreeError::CycleDetected {
                doc_id,
                node: record.nodes[0].node_id.clone(),
            })
        }
        [r] => *r,
        many => {
            return Err(TreeError::MultipleRoots {
                doc_id,
                roots: many.iter().map(|&i| record.nodes[i].node_id.clone()).collect(),
            })
        }
    };

    // Breadth-first from the root assigns levels; anything unreached hangs
    // off a cycle.
    let mut levels: Vec<Option<u32>> = vec![None; record.nodes.len()];
    levels[root] = Some(0);
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(i) = queue.pop_front() {
        let lvl = levels[i].unwrap_or(0);
        for &c in &children[i] {
            levels[c] = Some(lvl + 1);
            queue.push_back(c);
        }
    }
    if let Some(i) = levels.iter().position(Option::is_none) {
        return Err(TreeError::CycleDetected {
            doc_id,
            node: record.nodes[i].node_id.clone(),
        });
    }

    let nodes: Vec<EvidenceNode> = record
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| EvidenceNode {
            node_id: n.node_id.clone(),
            parent_id: n.parent_id.clone(),
            level: levels[i].unwrap_or(0),
            title: n.title.clone(),
            text: n.text.clone(),
            is_leaf: children[i].is_empty(),
        })
        .collect();
    let edges = nodes
        .iter()
        .filter_map(|n| n.parent_id.clone().map(|p| (p, n.node_id.clone())))
        .collect();

    Ok(EvidenceTree {
        doc_id: record.doc_id.clone(),
        title: record.title.clone(),
        nodes,
        edges,
        index,
        children,
        root,
    })
}

impl AsRef<EvidenceTree> for EvidenceTree {
    fn as_ref(&self) -> &EvidenceTree {
        self
    }
}

impl EvidenceTree {
    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn nodes(&self) -> &[EvidenceNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn root(&self) -> &EvidenceNode {
        &self.nodes[self.root]
    }

    pub fn node(&self, id: &NodeId) -> Option<&EvidenceNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.index.contains_key(id)
    }

    pub fn children(&self, id: &NodeId) -> impl Iterator<Item = &EvidenceNode> {
        let idx = self.index.get(id).copied();
        idx.into_iter()
            .flat_map(move |i| self.children[i].iter().map(move |&c| &self.nodes[c]))
    }

    /// Leaves in record order. A root-only tree yields its root.
    pub fn leaves(&self) -> impl Iterator<Item = &EvidenceNode> {
        self.nodes.iter().filter(|n| n.is_leaf)
    }

    /// Ancestors of `id` from its parent up to the root.
    pub fn ancestors(&self, id: &NodeId) -> Vec<&EvidenceNode> {
        let mut out = Vec::new();
        let mut cur = self.node(id).and_then(|n| n.parent_id.as_ref());
        while let Some(p) = cur {
            match self.node(p) {
                Some(n) => {
                    out.push(n);
                    cur = n.parent_id.as_ref();
                }
                None => break,
            }
        }
        out
    }

    pub fn depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    pub fn to_record(&self) -> DocumentRecord {
        DocumentRecord {
            doc_id: self.doc_id.clone(),
            title: self.title.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    node_id: n.node_id.clone(),
                    parent_id: n.parent_id.clone(),
                    level: n.level,
                    title: n.title.clone(),
                    text: n.text.clone(),
                })
                .collect(),
        }
    }
}

/// Result of one retrieval call: `k` ranked sources.
#[derive(Debug, Clone)]
pub struct RetrievalOutput {
    pub search_index: usize,
    pub query: String,
    pub trees: Vec<Arc<EvidenceTree>>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafRef {
    pub node_id: NodeId,
    pub text: String,
}

/// All leaves of a step's retrieved trees, injected or not.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LeafPool {
    pub search_index: usize,
    pub leaves: Vec<LeafRef>,
}

impl LeafPool {
    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    /// Appends the members of `other` not already present.
    pub fn extend_unique(&mut self, other: &LeafPool) {
        let seen: HashSet<NodeId> = self.leaves.iter().map(|l| l.node_id.clone()).collect();
        self.leaves.extend(
            other
                .leaves
                .iter()
                .filter(|l| !seen.contains(&l.node_id))
                .cloned(),
        );
    }
}

pub fn leaf_pool(output: &RetrievalOutput) -> LeafPool {
    let mut seen = HashSet::new();
    let leaves = output
        .trees
        .iter()
        .flat_map(|t| t.leaves())
        .filter(|n| seen.insert(n.node_id.clone()))
        .map(|n| LeafRef {
            node_id: n.node_id.clone(),
            text: n.text.clone(),
        })
        .collect();
    LeafPool {
        search_index: output.search_index,
        leaves,
    }
}

/// What an expansion call actually did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpansionOutcome {
    /// Children newly injected, in edge order.
    pub added: Vec<NodeId>,
    /// Edges that were rejected, with the reason.
    pub rejected: Vec<LedgerError>,
}

#[derive(Debug, Clone)]
struct NodeInfo {
    parent: Option<NodeId>,
    text: String,
}

/// Time-indexed record of nodes injected into the agent context.
///
/// Every mutating call takes a primitive step strictly after the last one
/// recorded and stores a snapshot of the full injected set at that step.
#[derive(Debug, Clone, Default)]
pub struct InjectedLedger {
    entries: Vec<(usize, NodeId)>,
    snapshots: BTreeMap<usize, Arc<BTreeSet<NodeId>>>,
    current: BTreeSet<NodeId>,
    known: HashMap<NodeId, NodeInfo>,
    known_edges: HashSet<Edge>,
}

impl InjectedLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_step(&self, t: usize) -> Result<(), LedgerError> {
        match self.snapshots.keys().next_back() {
            Some(&last) if t <= last => Err(LedgerError::NonMonotoneStep { step: t, last }),
            _ => Ok(()),
        }
    }

    fn commit(&mut self, t: usize) {
        let snap = match self.snapshots.values().next_back() {
            Some(prev) if prev.len() == self.current.len() => Arc::clone(prev),
            _ => Arc::new(self.current.clone()),
        };
        self.snapshots.insert(t, snap);
    }

    fn register(&mut self, tree: &EvidenceTree) {
        for n in tree.nodes() {
            self.known.entry(n.node_id.clone()).or_insert_with(|| NodeInfo {
                parent: n.parent_id.clone(),
                text: n.text.clone(),
            });
        }
        self.known_edges.extend(tree.edges().iter().cloned());
    }

    fn insert(&mut self, t: usize, id: NodeId) -> bool {
        if self.current.insert(id.clone()) {
            self.entries.push((t, id));
            true
        } else {
            false
        }
    }

    /// Injects the roots of every retrieved tree at step `t`. Roots already
    /// injected by an earlier retrieval are skipped. Returns the roots that
    /// were newly added.
    pub fn inject_roots(
        &mut self,
        output: &RetrievalOutput,
        t: usize,
    ) -> Result<Vec<NodeId>, LedgerError> {
        self.check_step(t)?;
        let mut added = Vec::new();
        for tree in &output.trees {
            self.register(tree);
            let id = tree.root().node_id.clone();
            if self.insert(t, id.clone()) {
                added.push(id);
            }
        }
        self.commit(t);
        Ok(added)
    }

    /// Checks one edge against the current injected set without mutating.
    pub fn check_edge(&self, edge: &Edge) -> Result<(), LedgerError> {
        if !self.known_edges.contains(edge) {
            return Err(LedgerError::UnknownEdge(edge.clone()));
        }
        if !self.current.contains(&edge.0) {
            return Err(LedgerError::ParentNotInjected(edge.clone()));
        }
        Ok(())
    }

    /// Applies an expansion action at step `t`. Parents are checked against
    /// the injected set as it stood before this step, so a child revealed by
    /// one edge cannot serve as the parent of another edge in the same call.
    /// Invalid edges are reported in the outcome and otherwise ignored;
    /// children already injected are skipped.
    pub fn apply_expansion(
        &mut self,
        edges: &[Edge],
        t: usize,
    ) -> Result<ExpansionOutcome, LedgerError> {
        self.check_step(t)?;
        let mut outcome = ExpansionOutcome::default();
        let mut accepted = Vec::new();
        for e in edges {
            match self.check_edge(e) {
                Ok(()) => accepted.push(e.1.clone()),
                Err(err) => outcome.rejected.push(err),
            }
        }
        for child in accepted {
            if self.insert(t, child.clone()) {
                outcome.added.push(child);
            }
        }
        self.commit(t);
        Ok(outcome)
    }

    /// Records a snapshot at `t` with no change to the injected set, for
    /// steps whose action injects nothing.
    pub fn carry(&mut self, t: usize) -> Result<(), LedgerError> {
        self.check_step(t)?;
        self.commit(t);
        Ok(())
    }

    pub fn snapshot(&self, t: usize) -> Option<&BTreeSet<NodeId>> {
        self.snapshots.get(&t).map(|s| s.as_ref())
    }

    /// `C_{t_end} \ C_{t_start - 1}`, with the set before step 0 empty.
    pub fn net_injected(
        &self,
        t_start: usize,
        t_end: usize,
    ) -> Result<BTreeSet<NodeId>, LedgerError> {
        let end = self
            .snapshot(t_end)
            .ok_or(LedgerError::MissingSnapshot(t_end))?;
        self.snapshot(t_start)
            .ok_or(LedgerError::MissingSnapshot(t_start))?;
        if t_start == 0 {
            return Ok(end.clone());
        }
        let before = self
            .snapshot(t_start - 1)
            .ok_or(LedgerError::MissingSnapshot(t_start - 1))?;
        Ok(end.difference(before).cloned().collect())
    }

    pub fn injected(&self) -> &BTreeSet<NodeId> {
        &self.current
    }

    pub fn is_injected(&self, id: &NodeId) -> bool {
        self.current.contains(id)
    }

    pub fn entries(&self) -> &[(usize, NodeId)] {
        &self.entries
    }

    pub fn last_step(&self) -> Option<usize> {
        self.snapshots.keys().next_back().copied()
    }

    pub fn parent_of(&self, id: &NodeId) -> Option<&NodeId> {
        self.known.get(id).and_then(|n| n.parent.as_ref())
    }

    pub fn text_of(&self, id: &NodeId) -> Option<&str> {
        self.known.get(id).map(|n| n.text.as_str())
    }

    /// Texts of the injected nodes in injection order.
    pub fn injected_texts(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter_map(|(_, id)| self.text_of(id).map(str::to_string))
            .collect()
    }

    /// Texts of nodes injected at or before step `t`, in injection order.
    pub fn texts_up_to(&self, t: usize) -> Vec<String> {
        self.entries
            .iter()
            .take_while(|(s, _)| *s <= t)
            .filter_map(|(_, id)| self.text_of(id).map(str::to_string))
            .collect()
    }

    pub fn knows_edge(&self, edge: &Edge) -> bool {
        self.known_edges.contains(edge)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn record(doc_id: &str, nodes: &[(&str, Option<&str>)]) -> DocumentRecord {
        DocumentRecord {
            doc_id: doc_id.to_string(),
            title: doc_id.to_string(),
            nodes: nodes
                .iter()
                .map(|(id, parent)| NodeRecord {
                    node_id: NodeId::from(*id),
                    parent_id: parent.map(NodeId::from),
                    level: 0,
                    title: id.to_string(),
                    text: format!("text of {id}"),
                })
                .collect(),
        }
    }

    pub fn tree(doc_id: &str, nodes: &[(&str, Option<&str>)]) -> Arc<EvidenceTree> {
        Arc::new(build_tree(&record(doc_id, nodes)).unwrap())
    }

    pub fn output(l: usize, trees: Vec<Arc<EvidenceTree>>) -> RetrievalOutput {
        let scores = vec![1.0; trees.len()];
        RetrievalOutput {
            search_index: l,
            query: String::new(),
            trees,
            scores,
        }
    }
}
