//! Corpus ingestion: record parsing, technique cleaning, title n-grams,
//! title clustering and split de-duplication.

mod cluster;
mod dedup;
mod ngram;
mod record;
mod technique;

use std::path::PathBuf;

use thiserror::Error;

pub use cluster::{cluster_titles, ClusterOptions, TitleClustering};
pub use dedup::{dedup_training_split, DedupOptions, DedupReport, Removal, Split};
pub use ngram::{extract_ngrams, ngram_strings, NgramCaps, NgramEntry, NgramVocab};
pub use record::{
    parse_corpus, parse_csv_str, parse_json_record, parse_jsonl_str, to_jsonl, ArtworkRecord, Caption,
    CaptionCategory, CorpusFormat, ImageRef,
};
pub use technique::{clean_technique, DIMENSION_PATTERNS};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("missing field `{field}` on line {line}")]
    MissingField { line: usize, field: String },
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no n-gram survives filtering")]
    EmptyVocabulary,
    #[error("embedding for `{0}` has zero norm")]
    DegenerateInput(String),
    #[error("embedding for `{id}` has dimension {got}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, got: usize },
    #[error("cannot form {k} clusters from {distinct} distinct embeddings")]
    TooFewPoints { k: usize, distinct: usize },
    #[error("record `{0}` has no captions")]
    NoCaptions(String),
}

/// Checks that every record carries at least one caption (training splits).
pub fn require_captions(records: &[ArtworkRecord]) -> Result<(), CorpusError> {
    match records.iter().find(|r| r.captions.is_empty()) {
        Some(r) => Err(CorpusError::NoCaptions(r.id.clone())),
        None => Ok(()),
    }
}
