use std::collections::HashMap;

use crate::reward::normalize_answer;
use crate::utility::{AnswerScorer, Conditioning, ScorerError};

use super::embed::tokenize;

/// Unigram scorer: each candidate token gets the log of its additively
/// smoothed frequency in the conditioning text (question, evidence, trace).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyScorer {
    pub alpha: f64,
    pub vocab: f64,
}

impl Default for ToyScorer {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            vocab: 10_000.0,
        }
    }
}

pub fn toy_score(candidate: &str, conditioning: &Conditioning) -> Result<Vec<f64>, ScorerError> {
    ToyScorer::default().score_tokens(candidate, conditioning)
}

impl AnswerScorer for ToyScorer {
    fn score_tokens(
        &self,
        candidate: &str,
        conditioning: &Conditioning,
    ) -> Result<Vec<f64>, ScorerError> {
        let cand = normalize_answer(candidate);
        let tokens: Vec<&str> = cand.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(ScorerError(format!("candidate {candidate:?} has no tokens")));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut total = 0usize;
        let sources = std::iter::once(&conditioning.task)
            .chain(conditioning.evidence.iter())
            .chain(std::iter::once(&conditioning.trace));
        for text in sources {
            for tok in tokenize(&normalize_answer(text)) {
                *counts.entry(tok).or_default() += 1;
                total += 1;
            }
        }
        let denom = total as f64 + self.alpha * self.vocab;
        Ok(tokens
            .iter()
            .map(|t| {
                let c = counts.get(*t).copied().unwrap_or(0) as f64;
                ((c + self.alpha) / denom).ln()
            })
            .collect())
    }
}
