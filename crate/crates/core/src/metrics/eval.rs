use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{cider_d, rouge_l, sentence_bleu, BleuStats, MetricError, Tokens};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// BLEU-1 through BLEU-4.
    Bleu,
    Rouge,
    Cider,
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bleu" => Ok(Self::Bleu),
            "rouge" | "rouge_l" | "rouge-l" => Ok(Self::Rouge),
            "cider" | "cider-d" | "cider_d" => Ok(Self::Cider),
            other => Err(MetricError::UnknownMetric(other.to_string())),
        }
    }
}

impl Metric {
    pub fn parse_list(s: &str) -> Result<Vec<Self>, MetricError> {
        let mut v: Vec<Self> = s.split(',').filter(|x| !x.trim().is_empty()).map(str::parse).collect::<Result<_, _>>()?;
        v.sort();
        v.dedup();
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Corpus scores keyed `bleu1`..`bleu4`, `rouge_l`, `cider`.
    pub corpus: BTreeMap<String, f64>,
    pub items: Vec<EvalItem>,
    pub evaluated: usize,
    /// Reference ids with no prediction.
    pub skipped: usize,
    pub skipped_ids: Vec<String>,
    /// Predictions that tokenize to nothing; they score 0.
    pub empty_candidates: usize,
}

/// Scores predictions against references. Items follow the reference
/// order; ids without a prediction are skipped and counted. CIDEr needs at
/// least two evaluated items.
pub fn evaluate_corpus(
    preds: &HashMap<String, String>,
    refs: &[(String, Vec<String>)],
    metrics: &[Metric],
) -> Result<EvalReport, MetricError> {
    let mut ids = Vec::new();
    let mut cands: Vec<Tokens> = Vec::new();
    let mut ref_toks: Vec<Vec<Tokens>> = Vec::new();
    let mut skipped_ids = Vec::new();
    for (i, (id, texts)) in refs.iter().enumerate() {
        if texts.is_empty() {
            return Err(MetricError::NoReferences(i));
        }
        match preds.get(id) {
            Some(p) => {
                ids.push(id.clone());
                cands.push(tokenize(p));
                ref_toks.push(texts.iter().map(|t| tokenize(t)).collect());
            }
            None => skipped_ids.push(id.clone()),
        }
    }
    let mut items: Vec<EvalItem> = ids
        .iter()
        .map(|id| EvalItem {
            id: id.clone(),
            scores: BTreeMap::new(),
        })
        .collect();
    let mut corpus = BTreeMap::new();
    for m in metrics {
        match m {
            Metric::Bleu => {
                let mut stats = BleuStats::default();
                for (k, (c, r)) in cands.iter().zip(&ref_toks).enumerate() {
                    stats.add(c, r);
                    for n in 1..=4 {
                        items[k].scores.insert(format!("bleu{n}"), sentence_bleu(c, r, n));
                    }
                }
                for n in 1..=4 {
                    corpus.insert(format!("bleu{n}"), stats.score(n));
                }
            }
            Metric::Rouge => {
                let mut total = 0.0;
                for (k, (c, r)) in cands.iter().zip(&ref_toks).enumerate() {
                    let s = rouge_l(c, r);
                    items[k].scores.insert("rouge_l".into(), s);
                    total += s;
                }
                corpus.insert("rouge_l".into(), if cands.is_empty() { 0.0 } else { total / cands.len() as f64 });
            }
            Metric::Cider => {
                let s = cider_d(&cands, &ref_toks)?;
                for (k, v) in s.per_item.into_iter().enumerate() {
                    items[k].scores.insert("cider".into(), v);
                }
                corpus.insert("cider".into(), s.corpus);
            }
        }
    }
    Ok(EvalReport {
        corpus,
        evaluated: items.len(),
        skipped: skipped_ids.len(),
        skipped_ids,
        empty_candidates: cands.iter().filter(|c| c.is_empty()).count(),
        items,
    })
}

#[derive(Deserialize)]
struct PredLine {
    id: String,
    caption: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RefCaption {
    Text(String),
    Object { text: String },
}

#[derive(Deserialize)]
struct RefLine {
    id: String,
    captions: Vec<RefCaption>,
}

fn read_jsonl<L: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<L>, MetricError> {
    let text = std::fs::read_to_string(path).map_err(|source| MetricError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| MetricError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// `{id, caption}` lines; a repeated id keeps its first caption (beam rank 0
/// when reading caption output).
pub fn read_predictions(path: &Path) -> Result<HashMap<String, String>, MetricError> {
    let mut out = HashMap::new();
    for l in read_jsonl::<PredLine>(path)? {
        out.entry(l.id).or_insert(l.caption);
    }
    Ok(out)
}

/// `{id, captions: [...]}` lines; captions may be strings or objects with a
/// `text` field, so corpus files work as references.
pub fn read_references(path: &Path) -> Result<Vec<(String, Vec<String>)>, MetricError> {
    Ok(read_jsonl::<RefLine>(path)?
        .into_iter()
        .map(|l| {
            let caps = l
                .captions
                .into_iter()
                .map(|c| match c {
                    RefCaption::Text(t) | RefCaption::Object { text: t } => t,
                })
                .collect();
            (l.id, caps)
        })
        .collect())
}

pub fn evaluate_files(pred: &Path, refs: &Path, metrics: &[Metric]) -> Result<EvalReport, MetricError> {
    evaluate_corpus(&read_predictions(pred)?, &read_references(refs)?, metrics)
}
