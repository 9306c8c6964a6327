use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ArtworkRecord;
use crate::text::normalize_caption;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupOptions {
    /// Also remove captions whose token-set Jaccard similarity with a held-out
    /// caption reaches this threshold. Off by default.
    pub jaccard_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub record_id: String,
    pub caption: String,
    pub matched: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    pub removals: Vec<Removal>,
    /// Training records dropped because no caption survived.
    pub dropped_records: Vec<String>,
}

fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Removes every training caption whose normalized form matches a val/test
/// caption; records left without captions are dropped. Val is checked first.
pub fn dedup_training_split(
    train: &[ArtworkRecord],
    val: &[ArtworkRecord],
    test: &[ArtworkRecord],
    opts: DedupOptions,
) -> (Vec<ArtworkRecord>, DedupReport) {
    let mut held: HashMap<String, Split> = HashMap::new();
    for (split, records) in [(Split::Test, test), (Split::Val, val)] {
        for r in records {
            for c in &r.captions {
                held.insert(normalize_caption(&c.text), split);
            }
        }
    }
    let mut held_sorted: Vec<(&String, &Split)> = held.iter().collect();
    held_sorted.sort_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0)));
    let held_sets: Vec<(BTreeSet<&str>, Split)> = held_sorted
        .iter()
        .map(|(s, sp)| (s.split(' ').filter(|t| !t.is_empty()).collect(), **sp))
        .collect();

    let mut report = DedupReport::default();
    let mut kept = Vec::with_capacity(train.len());
    for r in train {
        let mut rec = r.clone();
        rec.captions.retain(|c| {
            let norm = normalize_caption(&c.text);
            let mut hit = held.get(&norm).copied();
            if hit.is_none() {
                if let Some(th) = opts.jaccard_threshold {
                    let toks: BTreeSet<&str> = norm.split(' ').filter(|t| !t.is_empty()).collect();
                    hit = held_sets.iter().find(|(s, _)| jaccard(&toks, s) >= th).map(|(_, sp)| *sp);
                }
            }
            match hit {
                Some(matched) => {
                    report.removals.push(Removal {
                        record_id: r.id.clone(),
                        caption: c.text.clone(),
                        matched,
                    });
                    false
                }
                None => true,
            }
        });
        if rec.captions.is_empty() {
            report.dropped_records.push(rec.id);
        } else {
            kept.push(rec);
        }
    }
    (kept, report)
}
