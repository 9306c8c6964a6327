use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            k: 100,
            seed: 0,
            max_iters: 100,
        }
    }
}

/// Spherical k-means result over title embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitleClustering {
    pub k: usize,
    /// Unit-norm centroids.
    pub centroids: Vec<Vec<f64>>,
    pub assignment: BTreeMap<String, usize>,
    pub iterations: usize,
}

impl TitleClustering {
    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Index of the centroid with the largest cosine to `v` (lowest index on ties).
    pub fn nearest(&self, v: &[f64]) -> usize {
        argmax_cos(&self.centroids, v).0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = dot(v, v).sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

fn argmax_cos(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let s = dot(centroid, v);
        if s > best.1 {
            best = (c, s);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let dist: Vec<f64> = points
            .iter()
            .map(|p| (1.0 - argmax_cos(&centroids, p).1).max(0.0))
            .collect();
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = dist.iter().rposition(|d| *d > 0.0).unwrap_or(0);
            for (i, d) in dist.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
    }
    centroids
}

/// Spherical k-means with k-means++ seeding. Inputs are L2-normalized,
/// centroids are re-normalized every step and empty clusters are reseeded
/// with the point farthest from its centroid. Deterministic given the seed.
pub fn cluster_titles(
    embeddings: &[(String, Vec<f64>)],
    opts: ClusterOptions,
) -> Result<TitleClustering, CorpusError> {
    let dim = embeddings.first().map_or(0, |(_, v)| v.len());
    let mut points = Vec::with_capacity(embeddings.len());
    for (id, v) in embeddings {
        if v.len() != dim {
            return Err(CorpusError::DimensionMismatch {
                id: id.clone(),
                expected: dim,
                got: v.len(),
            });
        }
        points.push(normalized(v).ok_or_else(|| CorpusError::DegenerateInput(id.clone()))?);
    }
    let distinct: HashSet<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect())
        .collect();
    if opts.k == 0 || opts.k > distinct.len() {
        return Err(CorpusError::TooFewPoints {
            k: opts.k,
            distinct: distinct.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut centroids = plus_plus_init(&points, opts.k, &mut rng);
    let mut assign: Vec<usize> = points.iter().map(|p| argmax_cos(&centroids, p).0).collect();
    let mut iterations = 0;
    for _ in 0..opts.max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; opts.k];
        let mut sizes = vec![0usize; opts.k];
        for (p, &c) in points.iter().zip(&assign) {
            sizes[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut reseeded: HashSet<usize> = HashSet::new();
        for c in 0..opts.k {
            match (sizes[c] > 0).then(|| normalized(&sums[c])).flatten() {
                Some(centroid) => centroids[c] = centroid,
                None => {
                    // farthest point from its own centroid, not already used
                    let far = (0..points.len())
                        .filter(|i| !reseeded.contains(i))
                        .map(|i| (i, dot(&points[i], &centroids[assign[i]])))
                        .fold(None::<(usize, f64)>, |best, cur| match best {
                            Some(b) if b.1 <= cur.1 => Some(b),
                            _ => Some(cur),
                        });
                    if let Some((i, _)) = far {
                        reseeded.insert(i);
                        centroids[c] = points[i].clone();
                    }
                }
            }
        }
        let next: Vec<usize> = points.iter().map(|p| argmax_cos(&centroids, p).0).collect();
        let stable = next == assign && reseeded.is_empty();
        assign = next;
        if stable {
            break;
        }
    }
    let assignment = embeddings
        .iter()
        .zip(&assign)
        .map(|((id, _), &c)| (id.clone(), c))
        .collect();
    Ok(TitleClustering {
        k: opts.k,
        centroids,
        assignment,
        iterations,
    })
}
