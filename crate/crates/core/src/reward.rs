//! Composite trajectory reward: token-F1 correctness with a format floor,
//! a capped tool-usage penalty, a retrieval bonus, and an imperfect ceiling.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub lambda_format: f64,
    pub lambda_penalty: f64,
    pub lambda_penalty_max: f64,
    pub lambda_ret: f64,
    pub lambda_ceil: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_format: 0.1,
            lambda_penalty: 0.2,
            lambda_penalty_max: 0.4,
            lambda_ret: 0.1,
            lambda_ceil: 0.9,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = 0.0 <= self.lambda_format
            && self.lambda_format <= self.lambda_ceil
            && self.lambda_ceil <= 1.0
            && 0.0 <= self.lambda_penalty
            && self.lambda_penalty <= self.lambda_penalty_max
            && self.lambda_ret >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(format!("invalid reward config: {self:?}"))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub f1: f64,
    pub r_correct: f64,
    pub r_penalty: f64,
    pub r_ret: f64,
    pub total: f64,
    pub ceiling_applied: bool,
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, turns every non-alphanumeric, non-space character into a
/// space, drops the articles `a`/`an`/`the`, and collapses whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    lowered
        .split_whitespace()
        .filter(|tok| !ARTICLES.contains(tok))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Whitespace-token F1 over normalized strings, multiset overlap.
pub fn f1(pred: &str, gold: &str) -> f64 {
    let pred = normalize_answer(pred);
    let gold = normalize_answer(gold);
    let pred_toks: Vec<&str> = pred.split_whitespace().collect();
    let gold_toks: Vec<&str> = gold.split_whitespace().collect();
    if pred_toks.is_empty() || gold_toks.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_toks {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred_toks {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred_toks.len() as f64;
    let recall = common as f64 / gold_toks.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn correctness_reward(pred: Option<&str>, gold: &str, cfg: &RewardConfig) -> f64 {
    match pred {
        None => 0.0,
        Some(p) => f1(p, gold).max(cfg.lambda_format),
    }
}

pub fn penalty_reward(violation_count: usize, cfg: &RewardConfig) -> f64 {
    -(cfg.lambda_penalty * violation_count as f64).min(cfg.lambda_penalty_max)
}

/// `lambda_ret` when the normalized gold answer occurs inside the normalized
/// concatenation of the injected texts.
pub fn retrieval_bonus<S: AsRef<str>>(injected_texts: &[S], gold: &str, cfg: &RewardConfig) -> f64 {
    let gold = normalize_answer(gold);
    if gold.is_empty() || injected_texts.is_empty() {
        return 0.0;
    }
    let joined = injected_texts
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ");
    if normalize_answer(&joined).contains(&gold) {
        cfg.lambda_ret
    } else {
        0.0
    }
}

pub fn total_reward<S: AsRef<str>>(
    pred: Option<&str>,
    gold: &str,
    violation_count: usize,
    injected_texts: &[S],
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let f1 = pred.map_or(0.0, |p| f1(p, gold));
    let r_correct = correctness_reward(pred, gold, cfg);
    let r_penalty = penalty_reward(violation_count, cfg);
    let r_ret = retrieval_bonus(injected_texts, gold, cfg);
    let raw = r_correct + r_penalty + r_ret;
    let (total, ceiling_applied) = if f1 == 1.0 {
        (raw.min(1.0), false)
    } else {
        (raw.min(cfg.lambda_ceil), raw > cfg.lambda_ceil)
    };
    RewardBreakdown {
        f1,
        r_correct,
        r_penalty,
        r_ret,
        total,
        ceiling_applied,
    }
}
