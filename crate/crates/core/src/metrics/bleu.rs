use super::{check_aligned, ngram_counts, MetricError, Tokens};

/// Corpus sufficient statistics for BLEU.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    /// Clipped matches per order.
    pub matches: [usize; 4],
    /// Candidate n-grams per order.
    pub totals: [usize; 4],
    pub cand_len: usize,
    /// Sum of the reference lengths closest to each candidate.
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add(&mut self, cand: &[String], refs: &[Tokens]) {
        for n in 1..=4 {
            let c = ngram_counts(cand, n);
            let mut max_ref: std::collections::HashMap<&[String], usize> = Default::default();
            for r in refs {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            self.matches[n - 1] += c.iter().map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0))).sum::<usize>();
            self.totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
        self.cand_len += cand.len();
        // closest reference length, ties to the shorter one
        self.ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0);
    }

    /// Geometric mean of precisions 1..=n with the brevity penalty.
    pub fn score(&self, n: usize) -> f64 {
        if self.cand_len == 0 || (0..n).any(|i| self.matches[i] == 0) {
            return 0.0;
        }
        let log_p: f64 = (0..n).map(|i| (self.matches[i] as f64 / self.totals[i] as f64).ln()).sum::<f64>() / n as f64;
        let bp = if self.cand_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        };
        bp * log_p.exp()
    }
}

/// Corpus BLEU-n: clipped counts and lengths pooled over all items before
/// taking precisions and the brevity penalty.
pub fn bleu(cands: &[Tokens], refs: &[Vec<Tokens>], n: usize) -> Result<f64, MetricError> {
    if !(1..=4).contains(&n) {
        return Err(MetricError::BadOrder(n));
    }
    check_aligned(cands.len(), refs)?;
    let mut s = BleuStats::default();
    for (c, r) in cands.iter().zip(refs) {
        s.add(c, r);
    }
    Ok(s.score(n))
}

/// BLEU-n of a single candidate.
pub fn sentence_bleu(cand: &[String], refs: &[Tokens], n: usize) -> f64 {
    let mut s = BleuStats::default();
    s.add(cand, refs);
    s.score(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Tokens {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn exact_match_and_disjoint() {
        let c = vec![t("the cat sat on the mat")];
        let r = vec![vec![t("the cat sat on the mat")]];
        for n in 1..=4 {
            assert!((bleu(&c, &r, n).unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(bleu(&[t("dog runs")], &[vec![t("a cat sleeps")]], 1).unwrap(), 0.0);
        assert_eq!(bleu(&[vec![]], &[vec![t("a cat")]], 1).unwrap(), 0.0);
    }

    #[test]
    fn two_sentence_hand_computation() {
        // item 1: cand "the the the cat" vs refs "the cat is here" / "a cat"
        //   unigrams: the x3 clipped to 1, cat 1 -> 2 of 4
        //   bigrams: "the the" x2 (0), "the cat" (1) -> 1 of 3
        //   closest ref length to 4: 4
        // item 2: cand "a dog" vs ref "a dog barks"
        //   unigrams 2 of 2, bigrams 1 of 1, ref length 3
        // pooled: p1 = 4/6, p2 = 2/4, c = 6, r = 7, bp = exp(1 - 7/6)
        let cands = vec![t("the the the cat"), t("a dog")];
        let refs = vec![vec![t("the cat is here"), t("a cat")], vec![t("a dog barks")]];
        let bp = (1.0f64 - 7.0 / 6.0).exp();
        let b1 = bp * (4.0 / 6.0);
        let b2 = bp * ((4.0f64 / 6.0) * (2.0 / 4.0)).sqrt();
        assert!((bleu(&cands, &refs, 1).unwrap() - b1).abs() < 1e-12);
        assert!((bleu(&cands, &refs, 2).unwrap() - b2).abs() < 1e-12);
        // no trigram of item 1 or 2 matches
        assert_eq!(bleu(&cands, &refs, 3).unwrap(), 0.0);
    }

    #[test]
    fn closest_reference_length_prefers_shorter_on_tie() {
        let mut s = BleuStats::default();
        s.add(&t("a b c"), &[t("a b c d"), t("a b")]);
        assert_eq!(s.ref_len, 2);
    }

    #[test]
    fn errors() {
        assert!(matches!(bleu(&[t("a")], &[], 1), Err(MetricError::Misaligned { .. })));
        assert!(matches!(bleu(&[t("a")], &[vec![]], 1), Err(MetricError::NoReferences(0))));
        assert!(matches!(bleu(&[t("a")], &[vec![t("a")]], 5), Err(MetricError::BadOrder(5))));
    }
}
