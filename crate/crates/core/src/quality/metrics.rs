//! Binary classification metrics with agent as the positive class.

use serde::{Deserialize, Serialize};

use super::{Label, NgramLinearClassifier, QualityError};
use crate::par::*;

/// Scores at or above this value are predicted agent.
pub const DECISION_THRESHOLD: f64 = 0.5;

pub trait TextScorer: Sync {
    /// Probability of the agent class.
    fn score(&self, text: &str) -> f64;
}

impl TextScorer for NgramLinearClassifier {
    fn score(&self, text: &str) -> f64 {
        self.predict_score(text)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub false_neg: u64,
    pub fp: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn record(&mut self, actual: Label, predicted: Label) {
        match (actual, predicted) {
            (Label::Agent, Label::Agent) => self.tp += 1,
            (Label::Agent, Label::General) => self.false_neg += 1,
            (Label::General, Label::Agent) => self.fp += 1,
            (Label::General, Label::General) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.false_neg + self.fp + self.tn
    }

    /// Rows are actual (agent, general); columns predicted (agent, general).
    pub fn matrix(&self) -> [[u64; 2]; 2] {
        [[self.tp, self.false_neg], [self.fp, self.tn]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// `[[tp, fn], [fp, tn]]`
    pub confusion: [[u64; 2]; 2],
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl FilterMetrics {
    pub fn from_confusion(c: &Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.false_neg);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        FilterMetrics {
            accuracy: ratio(c.tp + c.tn, c.total()),
            f1,
            precision,
            recall,
            confusion: c.matrix(),
        }
    }
}

/// Score each `(text, actual)` pair in parallel and tally the confusion
/// matrix at [`DECISION_THRESHOLD`].
pub fn evaluate_filter<M, S>(model: &M, labeled: &[(S, Label)]) -> Result<FilterMetrics, QualityError>
where
    M: TextScorer + ?Sized,
    S: AsRef<str> + Sync,
{
    if labeled.is_empty() {
        return Err(QualityError::EmptyEvaluation);
    }
    let predicted: Vec<Label> = labeled
        .par_iter()
        .map(|(text, _)| if model.score(text.as_ref()) >= DECISION_THRESHOLD { Label::Agent } else { Label::General })
        .collect();
    let mut c = Confusion::default();
    for ((_, actual), pred) in labeled.iter().zip(predicted) {
        c.record(*actual, pred);
    }
    Ok(FilterMetrics::from_confusion(&c))
}
