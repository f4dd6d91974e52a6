#![allow(dead_code)]

use std::sync::Arc;

use infoctl::evidence::{build_tree, DocumentRecord, EvidenceTree, NodeId, NodeRecord, RetrievalOutput};
use infoctl::rollout::{Environment, EnvironmentError};
use infoctl::simenv::HashEmbedder;
use infoctl::utility::{AnswerScorer, CandidateSet, Conditioning, Embedder, ScorerError};

pub const GOLD: &str = "zabu";
pub const RIVAL: &str = "kelm";

pub fn doc(doc_id: &str, nodes: &[(&str, Option<&str>, &str)]) -> Arc<EvidenceTree> {
    let record = DocumentRecord {
        doc_id: doc_id.into(),
        title: doc_id.into(),
        nodes: nodes
            .iter()
            .map(|(id, parent, text)| NodeRecord {
                node_id: NodeId::from(*id),
                parent_id: parent.map(NodeId::from),
                level: 0,
                title: text.split_whitespace().take(2).collect::<Vec<_>>().join(" "),
                text: text.to_string(),
            })
            .collect(),
    };
    Arc::new(build_tree(&record).unwrap())
}

/// Belief over (kelm, zabu, orto): uniform with no evidence, 0.6/0.3/0.1
/// once any evidence is present, and gold-dominant once the gold answer
/// has been read.
pub struct BeliefScorer;

impl AnswerScorer for BeliefScorer {
    fn score_tokens(&self, candidate: &str, c: &Conditioning) -> Result<Vec<f64>, ScorerError> {
        let probs: [(&str, f64); 3] = if c.evidence.iter().any(|e| e.contains(GOLD)) {
            [(RIVAL, 0.1), (GOLD, 0.8), ("orto", 0.1)]
        } else if c.evidence.is_empty() {
            [(RIVAL, 1.0), (GOLD, 1.0), ("orto", 1.0)]
        } else {
            [(RIVAL, 0.6), (GOLD, 0.3), ("orto", 0.1)]
        };
        probs
            .iter()
            .find(|(name, _)| *name == candidate)
            .map(|(_, p)| vec![p.ln()])
            .ok_or_else(|| ScorerError(format!("unknown candidate {candidate}")))
    }
}

/// First search returns two documents that never mention the gold answer;
/// later searches return the document that does.
pub struct ContinueFixture {
    candidates: CandidateSet,
    embedder: HashEmbedder,
    early: Vec<Arc<EvidenceTree>>,
    late: Vec<Arc<EvidenceTree>>,
}

impl Default for ContinueFixture {
    fn default() -> Self {
        Self::new()
    }
}

impl ContinueFixture {
    pub fn new() -> Self {
        let a = doc(
            "a",
            &[
                ("a.0", None, "borvia geography overview"),
                ("a.1", Some("a.0"), "borvia lies east of the range"),
                ("a.2", Some("a.0"), "borvia winters are long and dry"),
            ],
        );
        let b = doc(
            "b",
            &[
                ("b.0", None, "borvia trade overview"),
                ("b.1", Some("b.0"), "borvia exports wool and copper"),
                ("b.2", Some("b.0"), "borvia market towns trade grain"),
            ],
        );
        let g = doc(
            "g",
            &[
                ("g.0", None, "borvia capital records"),
                ("g.1", Some("g.0"), "the capital of borvia is zabu"),
                ("g.2", Some("g.0"), "borvia moved its court in the last century"),
            ],
        );
        Self {
            candidates: CandidateSet::new(&[RIVAL, GOLD, "orto"], Some(GOLD)).unwrap(),
            embedder: HashEmbedder::default(),
            early: vec![a, b],
            late: vec![g],
        }
    }
}

impl Environment for ContinueFixture {
    fn task_id(&self) -> &str {
        "fixture"
    }

    fn question(&self) -> &str {
        "what is the capital of borvia"
    }

    fn gold(&self) -> &str {
        GOLD
    }

    fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    fn canned_trace(&self) -> &str {
        "look up the capital"
    }

    fn retrieve(&self, query: &str, search_index: usize) -> Result<RetrievalOutput, EnvironmentError> {
        let trees = if search_index == 0 { &self.early } else { &self.late };
        Ok(RetrievalOutput {
            search_index,
            query: query.to_string(),
            scores: vec![1.0; trees.len()],
            trees: trees.clone(),
        })
    }

    fn embedder(&self) -> &dyn Embedder {
        &self.embedder
    }

    fn scorer(&self) -> &dyn AnswerScorer {
        &BeliefScorer
    }
}
