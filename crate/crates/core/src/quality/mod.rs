//! Quality control: annotation, the hashed word n-gram filter, evaluation
//! metrics, and token-budgeted rank-and-keep filtering.

mod annotate;
mod classifier;
mod metrics;
mod rank;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusError;

pub use annotate::{
    annotate_batch, parse_verdict, read_labels, write_labels, AnnotationBackend, AnnotationOutcome, BackendError,
    FileBackend, HttpBackend, HttpBackendConfig, PromptTemplate,
};
pub use classifier::{train_filter, FilterHyperparams, NgramLinearClassifier, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use metrics::{evaluate_filter, Confusion, FilterMetrics, TextScorer, DECISION_THRESHOLD};
pub use rank::{filter_by_rank, FILTER_SCORE_KEY};

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("vocabulary is empty after applying min_count")]
    EmptyVocabulary,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("keep fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("document `{id}` has score {score} outside [0, 1]")]
    InvalidScore { id: String, score: f64 },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("evaluation set is empty")]
    EmptyEvaluation,
    #[error("prompt template: {0}")]
    Prompt(String),
    #[error("{}:{line}: {message}", path.display())]
    AtLine { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Agent,
    General,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Agent => "agent",
            Label::General => "general",
        }
    }

    /// Output column of the classifier head.
    pub(crate) fn index(self) -> usize {
        match self {
            Label::Agent => 0,
            Label::General => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = QualityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agent" => Ok(Label::Agent),
            "general" => Ok(Label::General),
            other => Err(QualityError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub doc_id: String,
    pub label: Label,
    pub annotator: String,
}
