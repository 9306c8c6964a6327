use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::text::tokenize;

/// Per-order size limits for the n-gram vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramCaps {
    pub unigrams: usize,
    pub bigrams: usize,
    pub trigrams: usize,
}

impl Default for NgramCaps {
    fn default() -> Self {
        Self {
            unigrams: 2000,
            bigrams: 1500,
            trigrams: 1000,
        }
    }
}

impl NgramCaps {
    pub fn uniform(cap: usize) -> Self {
        Self {
            unigrams: cap,
            bigrams: cap,
            trigrams: cap,
        }
    }

    pub fn for_order(&self, n: usize) -> usize {
        match n {
            1 => self.unigrams,
            2 => self.bigrams,
            3 => self.trigrams,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramEntry {
    pub n: usize,
    pub frequency: usize,
    /// Dense 0-based rank within order `n`.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramVocab {
    pub entries: BTreeMap<String, NgramEntry>,
    pub caps: NgramCaps,
}

/// Space-joined n-grams of one token sequence, in order of occurrence.
/// Unigrams for which `keep_unigram` returns false are skipped.
pub fn ngram_strings(tokens: &[String], n: usize, keep_unigram: impl Fn(&str) -> bool) -> Vec<String> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    tokens
        .windows(n)
        .filter(|w| n != 1 || keep_unigram(&w[0]))
        .map(|w| w.join(" "))
        .collect()
}

impl NgramVocab {
    pub fn get(&self, gram: &str) -> Option<&NgramEntry> {
        self.entries.get(gram)
    }

    pub fn contains(&self, gram: &str) -> bool {
        self.entries.contains_key(gram)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_of_order(&self, n: usize) -> usize {
        self.entries.values().filter(|e| e.n == n).count()
    }

    /// Entries of order `n` sorted by rank.
    pub fn ranked(&self, n: usize) -> Vec<(&str, &NgramEntry)> {
        let mut v: Vec<_> = self
            .entries
            .iter()
            .filter(|(_, e)| e.n == n)
            .map(|(s, e)| (s.as_str(), e))
            .collect();
        v.sort_by_key(|(_, e)| e.rank);
        v
    }

    /// All entries in global priority order: descending frequency, then
    /// order `n`, then string.
    pub fn priority_order(&self) -> Vec<(&str, &NgramEntry)> {
        let mut v: Vec<_> = self.entries.iter().map(|(s, e)| (s.as_str(), e)).collect();
        v.sort_by(|a, b| {
            b.1.frequency
                .cmp(&a.1.frequency)
                .then(a.1.n.cmp(&b.1.n))
                .then(a.0.cmp(b.0))
        });
        v
    }

    /// Distinct vocabulary n-grams occurring in `title`, in priority order.
    pub fn grams_in_title(&self, title: &str) -> Vec<String> {
        let tokens = tokenize(title);
        let mut seen = HashSet::new();
        let mut out: Vec<String> = Vec::new();
        for n in 1..=3 {
            for g in ngram_strings(&tokens, n, |_| true) {
                if self.contains(&g) && seen.insert(g.clone()) {
                    out.push(g);
                }
            }
        }
        out.sort_by(|a, b| {
            let (ea, eb) = (&self.entries[a], &self.entries[b]);
            eb.frequency.cmp(&ea.frequency).then(ea.n.cmp(&eb.n)).then(a.cmp(b))
        });
        out
    }
}

/// Counts every 1-, 2- and 3-gram occurrence over the titles and keeps the
/// `caps` most frequent of each order (ties broken lexicographically).
/// Unigrams are filtered through `stopwords` when given; longer n-grams are
/// taken from the full token sequence.
pub fn extract_ngrams(
    titles: &[impl AsRef<str>],
    caps: NgramCaps,
    stopwords: Option<&[&str]>,
) -> Result<NgramVocab, CorpusError> {
    let stop: HashSet<&str> = stopwords.map(|s| s.iter().copied().collect()).unwrap_or_default();
    let mut counts: [HashMap<String, usize>; 3] = Default::default();
    for title in titles {
        let tokens = tokenize(title.as_ref());
        for n in 1..=3 {
            for g in ngram_strings(&tokens, n, |t| !stop.contains(t)) {
                *counts[n - 1].entry(g).or_insert(0) += 1;
            }
        }
    }
    let mut entries = BTreeMap::new();
    for (i, table) in counts.into_iter().enumerate() {
        let n = i + 1;
        let mut ranked: Vec<(String, usize)> = table.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(caps.for_order(n));
        for (rank, (gram, frequency)) in ranked.into_iter().enumerate() {
            entries.insert(gram, NgramEntry { n, frequency, rank });
        }
    }
    if entries.is_empty() {
        return Err(CorpusError::EmptyVocabulary);
    }
    Ok(NgramVocab { entries, caps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::STOPWORDS;

    #[test]
    fn bigram_counted_across_titles() {
        let v = extract_ngrams(
            &["The Virgin and Child", "Virgin and Child with Saints"],
            NgramCaps::default(),
            Some(STOPWORDS),
        )
        .unwrap();
        assert_eq!(v.get("virgin and").unwrap().frequency, 2);
        assert_eq!(v.get("and child").unwrap().frequency, 2);
        assert!(v.get("and").is_none());
        assert_eq!(v.get("the virgin").unwrap().frequency, 1);
    }

    #[test]
    fn single_word_title() {
        let v = extract_ngrams(&["Sunflowers"], NgramCaps::default(), Some(STOPWORDS)).unwrap();
        assert_eq!(v.count_of_order(1), 1);
        assert_eq!(v.count_of_order(2), 0);
    }

    #[test]
    fn only_stopwords_is_an_error() {
        assert!(matches!(
            extract_ngrams(&["The"], NgramCaps::default(), Some(STOPWORDS)),
            Err(CorpusError::EmptyVocabulary)
        ));
        let empty: [&str; 0] = [];
        assert!(extract_ngrams(&empty, NgramCaps::default(), None).is_err());
    }

    #[test]
    fn ranks_are_dense_with_lexicographic_ties() {
        let v = extract_ngrams(&["b a", "c a", "b"], NgramCaps::uniform(10), None).unwrap();
        let r: Vec<_> = v.ranked(1).into_iter().map(|(s, e)| (s, e.rank, e.frequency)).collect();
        assert_eq!(r, [("a", 0, 2), ("b", 1, 2), ("c", 2, 1)]);
    }

    #[test]
    fn caps_truncate_per_order() {
        let v = extract_ngrams(&["a b c d e", "a b"], NgramCaps::uniform(2), None).unwrap();
        assert_eq!(v.count_of_order(1), 2);
        assert_eq!(v.count_of_order(2), 2);
        assert_eq!(v.count_of_order(3), 2);
        assert!(v.contains("a b"));
    }

    #[test]
    fn title_grams_follow_priority() {
        let v = extract_ngrams(
            &["Virgin and Child", "Virgin and Child", "Virgin"],
            NgramCaps::default(),
            Some(STOPWORDS),
        )
        .unwrap();
        assert_eq!(
            v.grams_in_title("The Virgin and Child"),
            ["virgin", "child", "and child", "virgin and", "virgin and child"]
        );
    }
}
