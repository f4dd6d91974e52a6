//! Per-search-step information utility: leaf-level kNN novelty against
//! earlier retrievals, answer-belief effectiveness as total variation, and
//! their convex combination.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::LeafPool;
use crate::reward::normalize_answer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UtilityError {
    #[error("novelty needs at least one newly retrieved leaf")]
    EmptyNewPool,
    #[error("distributions are over different candidate sets ({0} vs {1})")]
    MisalignedCandidates(usize, usize),
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("scorer failed: {0}")]
    ScorerFailure(#[from] ScorerError),
    #[error("candidate set is empty after deduplication")]
    EmptyCandidates,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ScorerError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; zero when either vector has zero norm.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    }
}

/// Maps text to a fixed-dimension vector. Implementations must be
/// deterministic and safe to call from several episodes at once.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> EmbeddingVector;
}

pub fn embed(text: &str, embedder: &dyn Embedder) -> EmbeddingVector {
    embedder.embed(text)
}

fn clamped_cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    a.cosine(b).clamp(0.0, 1.0)
}

/// `1 - mean cosine` of `v` to its `k_nn` nearest vectors in `prior`, or 1.0
/// when `prior` is empty.
pub fn leaf_novelty(v: &EmbeddingVector, prior: &[EmbeddingVector], k_nn: usize) -> f64 {
    let k = k_nn.min(prior.len());
    if k == 0 {
        return 1.0;
    }
    let mut sims: Vec<f64> = prior.iter().map(|p| clamped_cosine(v, p)).collect();
    sims.sort_unstable_by(|a, b| b.total_cmp(a));
    let mean = sims[..k].iter().sum::<f64>() / k as f64;
    (1.0 - mean).clamp(0.0, 1.0)
}

pub fn novelty_of_embeddings(
    new: &[EmbeddingVector],
    prior: &[EmbeddingVector],
    k_nn: usize,
) -> Result<f64, UtilityError> {
    if new.is_empty() {
        return Err(UtilityError::EmptyNewPool);
    }
    let total: f64 = new.iter().map(|v| leaf_novelty(v, prior, k_nn)).sum();
    Ok(total / new.len() as f64)
}

/// Mean leaf novelty of `new_leaves` against `prior_leaves`.
pub fn novelty(
    new_leaves: &LeafPool,
    prior_leaves: &LeafPool,
    k_nn: usize,
    embedder: &dyn Embedder,
) -> Result<f64, UtilityError> {
    let new: Vec<_> = new_leaves.leaves.iter().map(|l| embedder.embed(&l.text)).collect();
    let prior: Vec<_> = prior_leaves
        .leaves
        .iter()
        .map(|l| embedder.embed(&l.text))
        .collect();
    novelty_of_embeddings(&new, &prior, k_nn)
}

/// Candidate answers, deduplicated by normalized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    candidates: Vec<String>,
    gold_index: Option<usize>,
}

impl CandidateSet {
    /// Keeps the first spelling of each normalized answer. `gold`, when
    /// given, is added if missing and located by normalized match.
    pub fn new<S: AsRef<str>>(candidates: &[S], gold: Option<&str>) -> Result<Self, UtilityError> {
        let mut seen = HashSet::new();
        let mut out: Vec<String> = Vec::new();
        let mut ordered: Vec<String> = candidates.iter().map(|c| c.as_ref().to_string()).collect();
        if let Some(g) = gold {
            let g_norm = normalize_answer(g);
            if !ordered.iter().any(|c| normalize_answer(c) == g_norm) {
                ordered.push(g.to_string());
            }
        }
        for c in ordered {
            let n = normalize_answer(&c);
            if !n.is_empty() && seen.insert(n) {
                out.push(c);
            }
        }
        if out.is_empty() {
            return Err(UtilityError::EmptyCandidates);
        }
        let gold_index = gold.and_then(|g| {
            let g = normalize_answer(g);
            out.iter().position(|c| normalize_answer(c) == g)
        });
        Ok(Self {
            candidates: out,
            gold_index,
        })
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn gold_index(&self) -> Option<usize> {
        self.gold_index
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// What the answer scorer is conditioned on: the task, the injected
/// evidence in injection order, and a fixed reasoning trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub task: String,
    pub evidence: Vec<String>,
    pub trace: String,
}

/// Per-token log-probabilities of a candidate answer under some
/// conditioning. Must be deterministic; values are `<= 0`.
pub trait AnswerScorer: Send + Sync {
    fn score_tokens(&self, candidate: &str, conditioning: &Conditioning)
        -> Result<Vec<f64>, ScorerError>;
}

/// Request body for a remote scoring service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub task: String,
    pub evidence: Vec<String>,
    pub trace: String,
    pub candidate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub token_logprobs: Vec<f64>,
}

/// Carries a [`ScoreRequest`] to a scoring service and returns its reply.
pub trait ScoreTransport: Send + Sync {
    fn call(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError>;
}

/// Adapts any [`ScoreTransport`] into an [`AnswerScorer`].
pub struct RemoteScorer<T> {
    transport: T,
}

impl<T: ScoreTransport> RemoteScorer<T> {
    pub fn new(transport: T) -> Self {
        Self { transport }
    }
}

impl<T: ScoreTransport> AnswerScorer for RemoteScorer<T> {
    fn score_tokens(
        &self,
        candidate: &str,
        conditioning: &Conditioning,
    ) -> Result<Vec<f64>, ScorerError> {
        let req = ScoreRequest {
            task: conditioning.task.clone(),
            evidence: conditioning.evidence.clone(),
            trace: conditioning.trace.clone(),
            candidate: candidate.to_string(),
        };
        let resp = self.transport.call(&req)?;
        if let Some(bad) = resp.token_logprobs.iter().find(|v| v.is_nan() || **v > 0.0) {
            return Err(ScorerError(format!("invalid log-probability {bad}")));
        }
        Ok(resp.token_logprobs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub probs: Vec<f64>,
    pub search_index: Option<usize>,
    /// Set when every candidate score was non-finite or zero and the
    /// distribution fell back to uniform.
    #[serde(default)]
    pub degenerate: bool,
}

impl AnswerDistribution {
    pub fn uniform(n: usize, search_index: Option<usize>) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
            search_index,
            degenerate: false,
        }
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Normalizes per-candidate mean log-probabilities into a distribution.
/// The geometric-mean scores are rescaled by the largest one before
/// exponentiating, which leaves the normalized result unchanged.
pub fn normalize_scores(mean_logprobs: &[f64], search_index: Option<usize>) -> AnswerDistribution {
    let n = mean_logprobs.len();
    let max = mean_logprobs
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let mut d = AnswerDistribution::uniform(n, search_index);
        d.degenerate = true;
        return d;
    }
    let weights: Vec<f64> = mean_logprobs
        .iter()
        .map(|v| if v.is_nan() { 0.0 } else { (v - max).exp() })
        .collect();
    let z: f64 = weights.iter().sum();
    AnswerDistribution {
        probs: weights.iter().map(|w| w / z).collect(),
        search_index,
        degenerate: false,
    }
}

/// Length-normalized answer distribution over `candidates`.
pub fn answer_distribution(
    scorer: &dyn AnswerScorer,
    conditioning: &Conditioning,
    candidates: &CandidateSet,
    search_index: Option<usize>,
) -> Result<AnswerDistribution, UtilityError> {
    if candidates.is_empty() {
        return Err(UtilityError::EmptyCandidates);
    }
    let mut means = Vec::with_capacity(candidates.len());
    for c in candidates.candidates() {
        let lp = scorer.score_tokens(c, conditioning)?;
        if lp.is_empty() {
            return Err(ScorerError(format!("no tokens scored for candidate {c:?}")).into());
        }
        means.push(lp.iter().sum::<f64>() / lp.len() as f64);
    }
    Ok(normalize_scores(&means, search_index))
}

/// Total variation distance between two aligned distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64, UtilityError> {
    if p.len() != q.len() {
        return Err(UtilityError::MisalignedCandidates(p.len(), q.len()));
    }
    let tv = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(tv.clamp(0.0, 1.0))
}

pub fn effectiveness(
    curr: &AnswerDistribution,
    prev: &AnswerDistribution,
) -> Result<f64, UtilityError> {
    total_variation(&curr.probs, &prev.probs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityScore {
    pub novelty: f64,
    pub effectiveness: f64,
    pub utility: f64,
    pub rho: f64,
}

fn unit(name: &'static str, value: f64) -> Result<f64, UtilityError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(UtilityError::OutOfRange { name, value })
    }
}

pub fn utility(novelty: f64, effectiveness: f64, rho: f64) -> Result<UtilityScore, UtilityError> {
    let novelty = unit("novelty", novelty)?;
    let effectiveness = unit("effectiveness", effectiveness)?;
    let rho = unit("rho", rho)?;
    Ok(UtilityScore {
        novelty,
        effectiveness,
        utility: rho * novelty + (1.0 - rho) * effectiveness,
        rho,
    })
}
