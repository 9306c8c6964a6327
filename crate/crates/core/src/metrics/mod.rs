//! Reference-based caption metrics over word tokens: corpus BLEU-1..4,
//! ROUGE-L and CIDEr-D, plus a file-level evaluation harness.

mod bleu;
mod cider;
mod eval;
mod rouge;

use std::collections::HashMap;

use thiserror::Error;

pub use bleu::{bleu, sentence_bleu, BleuStats};
pub use cider::{cider_d, CiderScores, CIDER_SIGMA};
pub use eval::{evaluate_corpus, evaluate_files, read_predictions, read_references, EvalItem, EvalReport, Metric};
pub use rouge::{lcs_len, rouge_l, ROUGE_BETA_SQ};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{candidates} candidates but {references} reference sets")]
    Misaligned { candidates: usize, references: usize },
    #[error("BLEU order must be in 1..=4, got {0}")]
    BadOrder(usize),
    #[error("item {0} has no references")]
    NoReferences(usize),
    #[error("CIDEr needs at least 2 items, got {0}")]
    CorpusTooSmall(usize),
    #[error("unknown metric `{0}` (expected bleu, rouge or cider)")]
    UnknownMetric(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

/// Token sequence.
pub type Tokens = Vec<String>;

/// Counts of every n-gram of order `n`.
pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub(crate) fn check_aligned(cands: usize, refs: &[Vec<Tokens>]) -> Result<(), MetricError> {
    if cands != refs.len() {
        return Err(MetricError::Misaligned {
            candidates: cands,
            references: refs.len(),
        });
    }
    match refs.iter().position(|r| r.is_empty()) {
        Some(i) => Err(MetricError::NoReferences(i)),
        None => Ok(()),
    }
}
