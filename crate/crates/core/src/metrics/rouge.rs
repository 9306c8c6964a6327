use super::Tokens;

/// Weight of recall relative to precision in the F-measure, used directly
/// as the squared beta.
pub const ROUGE_BETA_SQ: f64 = 1.2;

/// Longest common subsequence length.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure `(1 + b2) P R / (R + b2 P)`, maximized over references.
pub fn rouge_l(cand: &[String], refs: &[Tokens]) -> f64 {
    refs.iter()
        .map(|r| {
            let l = lcs_len(cand, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / cand.len() as f64;
            let rec = l / r.len() as f64;
            (1.0 + ROUGE_BETA_SQ) * p * rec / (rec + ROUGE_BETA_SQ * p)
        })
        .fold(0.0, f64::max)
}
