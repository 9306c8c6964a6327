use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{clean_technique, ArtworkRecord};
use crate::text::tokenize;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Marker ids in serialization order: author, title, technique, type,
/// school, timeframe.
pub const MARKERS: [usize; 6] = [4, 5, 6, 7, 8, 9];
pub const SPECIALS: [&str; 10] = [
    "<pad>",
    "<bos>",
    "<eos>",
    "<unk>",
    "<author>",
    "<title>",
    "<technique>",
    "<type>",
    "<school>",
    "<timeframe>",
];

/// Word-level vocabulary: special tokens first, then words by descending
/// frequency (ties lexicographic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Metadata strings of a record in marker order; technique is cleaned.
pub fn metadata_fields(r: &ArtworkRecord) -> [String; 6] {
    [
        r.author.clone(),
        r.title.clone(),
        clean_technique(&r.technique),
        r.type_.clone(),
        r.school.clone(),
        r.timeframe.clone(),
    ]
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Builds from captions and metadata; words seen fewer than `min_freq`
    /// times map to `<unk>`.
    pub fn build(records: &[ArtworkRecord], min_freq: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for r in records {
            let texts = r.captions.iter().map(|c| c.text.clone()).chain(metadata_fields(r));
            for text in texts {
                for t in tokenize(&text) {
                    *counts.entry(t).or_insert(0) += 1;
                }
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq.max(1)).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Joins word tokens, stopping at `<eos>` and skipping other specials
    /// except `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut words = Vec::new();
        for &id in ids {
            if id == EOS {
                break;
            }
            if id == UNK || !Self::is_special(id) {
                words.push(self.token(id));
            }
        }
        words.join(" ")
    }

    /// `<author> a.. <title> t.. <technique> c.. <type> y.. <school> s..
    /// <timeframe> f..`, each field cut to `field_max` tokens. Returns the
    /// ids and the six marker positions.
    pub fn serialize_metadata(&self, r: &ArtworkRecord, field_max: usize) -> (Vec<usize>, [usize; 6]) {
        let mut ids = Vec::new();
        let mut pos = [0; 6];
        for (k, field) in metadata_fields(r).iter().enumerate() {
            pos[k] = ids.len();
            ids.push(MARKERS[k]);
            ids.extend(self.encode(field).into_iter().take(field_max));
        }
        (ids, pos)
    }
}
