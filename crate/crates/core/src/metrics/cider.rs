use std::collections::HashMap;

use super::{check_aligned, ngram_counts, MetricError, Tokens};

/// Length-penalty width of CIDEr-D.
pub const CIDER_SIGMA: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CiderScores {
    pub corpus: f64,
    pub per_item: Vec<f64>,
}

struct Vector<'a> {
    by_order: [HashMap<&'a [String], f64>; 4],
    norm: [f64; 4],
    /// Bigram count, used as the length in the penalty.
    length: f64,
}

fn to_vector<'a>(tokens: &'a [String], df: &HashMap<&'a [String], f64>, log_n: f64) -> Vector<'a> {
    let mut v = Vector {
        by_order: Default::default(),
        norm: [0.0; 4],
        length: 0.0,
    };
    for n in 1..=4 {
        for (g, tf) in ngram_counts(tokens, n) {
            let d = df.get(g).copied().unwrap_or(0.0).max(1.0).ln();
            let w = tf as f64 * (log_n - d);
            v.norm[n - 1] += w * w;
            v.by_order[n - 1].insert(g, w);
            if n == 2 {
                v.length += tf as f64;
            }
        }
    }
    for x in &mut v.norm {
        *x = x.sqrt();
    }
    v
}

fn similarity(c: &Vector, r: &Vector) -> [f64; 4] {
    let delta = c.length - r.length;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut out = [0.0; 4];
    for n in 0..4 {
        let mut val: f64 = c.by_order[n]
            .iter()
            .map(|(g, &w)| {
                let rw = r.by_order[n].get(g).copied().unwrap_or(0.0);
                w.min(rw) * rw
            })
            .sum();
        if c.norm[n] != 0.0 && r.norm[n] != 0.0 {
            val /= c.norm[n] * r.norm[n];
        }
        out[n] = val * penalty;
    }
    out
}

/// CIDEr-D: TF-IDF n-gram vectors (n = 1..4) with document frequencies
/// over each item's reference set, clipped cosine per order averaged over
/// orders and references, a Gaussian length penalty and a factor of 10.
pub fn cider_d(cands: &[Tokens], refs: &[Vec<Tokens>]) -> Result<CiderScores, MetricError> {
    check_aligned(cands.len(), refs)?;
    if cands.len() < 2 {
        return Err(MetricError::CorpusTooSmall(cands.len()));
    }
    let mut df: HashMap<&[String], f64> = HashMap::new();
    for item in refs {
        let mut seen = std::collections::HashSet::new();
        for r in item {
            for n in 1..=4 {
                seen.extend(ngram_counts(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let log_n = (refs.len() as f64).ln();
    let per_item: Vec<f64> = cands
        .iter()
        .zip(refs)
        .map(|(c, item)| {
            let cv = to_vector(c, &df, log_n);
            let mut acc = [0.0; 4];
            for r in item {
                let s = similarity(&cv, &to_vector(r, &df, log_n));
                for n in 0..4 {
                    acc[n] += s[n];
                }
            }
            acc.iter().sum::<f64>() / 4.0 / item.len() as f64 * 10.0
        })
        .collect();
    let corpus = per_item.iter().sum::<f64>() / per_item.len() as f64;
    Ok(CiderScores { corpus, per_item })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn t(s: &str) -> Tokens {
        s.split_whitespace().map(String::from).collect()
    }

    /// Straight-line second implementation over joined-string n-gram keys.
    fn oracle(cands: &[&str], refs: &[Vec<&str>]) -> Vec<f64> {
        let grams = |s: &str| -> BTreeMap<String, f64> {
            let w: Vec<&str> = s.split_whitespace().collect();
            let mut m = BTreeMap::new();
            for n in 1..=4 {
                for i in 0..w.len().saturating_sub(n - 1) {
                    *m.entry(format!("{n}|{}", w[i..i + n].join(" "))).or_insert(0.0) += 1.0;
                }
            }
            m
        };
        let mut df: BTreeMap<String, f64> = BTreeMap::new();
        for item in refs {
            let mut keys: Vec<String> = item.iter().flat_map(|r| grams(r).into_keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                *df.entry(k).or_default() += 1.0;
            }
        }
        let big_n = (refs.len() as f64).ln();
        let weigh = |s: &str| -> (BTreeMap<String, f64>, f64) {
            let g = grams(s);
            let len: f64 = g.iter().filter(|(k, _)| k.starts_with("2|")).map(|(_, v)| v).sum();
            let w = g.into_iter().map(|(k, tf)| {
                let d = df.get(&k).copied().unwrap_or(0.0).max(1.0).ln();
                (k, tf * (big_n - d))
            });
            (w.collect(), len)
        };
        let mut out = Vec::new();
        for (c, item) in cands.iter().zip(refs) {
            let (cw, cl) = weigh(c);
            let mut total = 0.0;
            for r in item {
                let (rw, rl) = weigh(r);
                for n in 1..=4 {
                    let p = format!("{n}|");
                    let cn: f64 = cw.iter().filter(|(k, _)| k.starts_with(&p)).map(|(_, v)| v * v).sum::<f64>().sqrt();
                    let rn: f64 = rw.iter().filter(|(k, _)| k.starts_with(&p)).map(|(_, v)| v * v).sum::<f64>().sqrt();
                    let mut dot = 0.0;
                    for (k, v) in cw.iter().filter(|(k, _)| k.starts_with(&p)) {
                        let rv = rw.get(k).copied().unwrap_or(0.0);
                        dot += v.min(rv) * rv;
                    }
                    if cn != 0.0 && rn != 0.0 {
                        dot /= cn * rn;
                    }
                    total += dot * (-((cl - rl) * (cl - rl)) / 72.0).exp();
                }
            }
            out.push(total / 4.0 / item.len() as f64 * 10.0);
        }
        out
    }

    fn run(cands: &[&str], refs: &[Vec<&str>]) -> CiderScores {
        let c: Vec<Tokens> = cands.iter().map(|s| t(s)).collect();
        let r: Vec<Vec<Tokens>> = refs.iter().map(|i| i.iter().map(|s| t(s)).collect()).collect();
        cider_d(&c, &r).unwrap()
    }

    #[test]
    fn five_item_corpus_matches_oracle() {
        let cands = ["a man riding a horse", "two dogs play in the snow", "a bowl of fruit on a table", "portrait of a woman", "the sea at night"];
        let refs = vec![
            vec!["a man rides a brown horse", "a rider on a horse"],
            vec!["two dogs playing in snow", "dogs run through the snow"],
            vec!["a still life with fruit on a table"],
            vec!["a portrait of a young woman", "a woman in a dark dress", "the lady poses"],
            vec!["a stormy sea under the moon", "waves at night"],
        ];
        let got = run(&cands, &refs);
        let want = oracle(&cands, &refs);
        for (g, w) in got.per_item.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
        assert!((got.corpus - want.iter().sum::<f64>() / 5.0).abs() < 1e-9);
    }

    #[test]
    fn identical_candidates_score_equally() {
        let s = ["a red barn in a field", "an old man reading", "three boats on a lake"];
        let refs: Vec<Vec<&str>> = s.iter().map(|x| vec![*x]).collect();
        let got = run(&s, &refs);
        for v in &got.per_item {
            assert!((v - got.per_item[0]).abs() < 1e-9);
            assert!(*v > 0.0);
        }
    }

    #[test]
    fn no_overlap_scores_zero() {
        let got = run(&["zebra", "a cat on a mat"], &[vec!["a horse in a field"], vec!["a cat on a mat"]]);
        assert_eq!(got.per_item[0], 0.0);
        assert!(got.per_item[1] > 0.0);
    }

    #[test]
    fn needs_two_items() {
        assert!(matches!(cider_d(&[t("a")], &[vec![t("a")]]), Err(MetricError::CorpusTooSmall(1))));
    }
}
