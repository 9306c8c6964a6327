use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub width: usize,
    pub max_len: usize,
    /// Scores are `log_prob / len^length_penalty`.
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            width: 5,
            max_len: 24,
            length_penalty: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated ids, excluding BOS; ends with EOS when finished by it.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub score: f64,
    pub finished: bool,
}

pub fn normalized_score(log_prob: f64, len: usize, penalty: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(penalty)
}

fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.log_prob.total_cmp(&a.log_prob))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search over `step`, which maps a prefix (starting with `bos`) to
/// log-probabilities over the vocabulary. Each step the `width` best
/// expansions by cumulative log-probability are kept; expansions ending in
/// `eos` or reaching `max_len` move to the finished pool. Returns up to
/// `width` finished hypotheses sorted by normalized score.
pub fn beam_search<E>(
    bos: usize,
    eos: usize,
    cfg: BeamConfig,
    banned: &[usize],
    mut step: impl FnMut(&[usize]) -> Result<Vec<f64>, E>,
) -> Result<Vec<Hypothesis>, E> {
    let width = cfg.width.max(1);
    let mut live: Vec<(Vec<usize>, f64)> = vec![(vec![bos], 0.0)];
    let mut pool: Vec<Hypothesis> = Vec::new();
    for t in 1..=cfg.max_len.max(1) {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (bi, (seq, lp)) in live.iter().enumerate() {
            let logp = step(seq)?;
            for (v, &l) in logp.iter().enumerate() {
                if !banned.contains(&v) && l.is_finite() {
                    cands.push((lp + l, bi, v));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(width);
        let mut next = Vec::with_capacity(width);
        for (lp, bi, v) in cands {
            let mut seq = live[bi].0.clone();
            seq.push(v);
            if v == eos || t == cfg.max_len.max(1) {
                let tokens = seq[1..].to_vec();
                pool.push(Hypothesis {
                    score: normalized_score(lp, tokens.len(), cfg.length_penalty),
                    tokens,
                    log_prob: lp,
                    finished: true,
                });
            } else {
                next.push((seq, lp));
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    pool.sort_by(by_score);
    pool.truncate(width);
    Ok(pool)
}

/// Argmax decoding.
pub fn greedy<E>(
    bos: usize,
    eos: usize,
    max_len: usize,
    length_penalty: f64,
    banned: &[usize],
    mut step: impl FnMut(&[usize]) -> Result<Vec<f64>, E>,
) -> Result<Hypothesis, E> {
    let mut seq = vec![bos];
    let mut lp = 0.0;
    for _ in 0..max_len.max(1) {
        let logp = step(&seq)?;
        let mut best: Option<(usize, f64)> = None;
        for (v, &l) in logp.iter().enumerate() {
            if banned.contains(&v) || !l.is_finite() {
                continue;
            }
            if best.is_none_or(|(_, b)| l > b) {
                best = Some((v, l));
            }
        }
        let Some((v, l)) = best else { break };
        seq.push(v);
        lp += l;
        if v == eos {
            break;
        }
    }
    let tokens = seq[1..].to_vec();
    Ok(Hypothesis {
        score: normalized_score(lp, tokens.len(), length_penalty),
        finished: true,
        tokens,
        log_prob: lp,
    })
}
