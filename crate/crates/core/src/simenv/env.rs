use crate::evidence::RetrievalOutput;
use crate::rollout::{Environment, EnvironmentError};
use crate::utility::{AnswerScorer, CandidateSet, Embedder};

use super::corpus::{SimCorpus, TaskRecord};
use super::scorer::ToyScorer;
use super::SimError;

/// One task over a shared corpus.
pub struct SimEnv<'c> {
    corpus: &'c SimCorpus,
    task: &'c TaskRecord,
    candidates: CandidateSet,
    k: usize,
    scorer: ToyScorer,
}

impl<'c> SimEnv<'c> {
    pub fn new(corpus: &'c SimCorpus, task: &'c TaskRecord, k: usize) -> Result<Self, SimError> {
        if k == 0 {
            return Err(SimError::InvalidSpec("retrieval k must be at least 1".into()));
        }
        let candidates = CandidateSet::new(&task.candidates, Some(task.gold()))
            .map_err(|e| SimError::InvalidSpec(format!("{}: {e}", task.task_id)))?;
        Ok(Self {
            corpus,
            task,
            candidates,
            k,
            scorer: ToyScorer::default(),
        })
    }

    pub fn task(&self) -> &TaskRecord {
        self.task
    }
}

impl Environment for SimEnv<'_> {
    fn task_id(&self) -> &str {
        &self.task.task_id
    }

    fn question(&self) -> &str {
        &self.task.question
    }

    fn gold(&self) -> &str {
        self.task.gold()
    }

    fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    fn canned_trace(&self) -> &str {
        &self.task.canned_trace
    }

    fn retrieve(&self, query: &str, search_index: usize) -> Result<RetrievalOutput, EnvironmentError> {
        self.corpus
            .retrieve(query, self.k, search_index)
            .map_err(|e| EnvironmentError(e.to_string()))
    }

    fn embedder(&self) -> &dyn Embedder {
        self.corpus.embedder()
    }

    fn scorer(&self) -> &dyn AnswerScorer {
        &self.scorer
    }
}
