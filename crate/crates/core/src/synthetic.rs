//! Seeded generators for toy corpora and random heterogeneous graphs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ArtworkRecord, Caption, CaptionCategory, ImageRef};
use crate::embed::{IMAGE_LEN, IMAGE_SIDE};
use crate::graph::{default_metapaths, HeteroGraph, MetaPath, NodeRef, NodeTable, NodeType};

const AUTHORS: [&str; 6] = ["Vermeer", "Rembrandt", "Titian", "Goya", "Monet", "Durer"];
const SUBJECTS: [&str; 10] = [
    "woman", "man", "child", "ship", "horse", "river", "saint", "garden", "harbour", "village",
];
const ADJECTIVES: [&str; 8] = ["quiet", "bright", "dark", "stormy", "golden", "pale", "crowded", "lonely"];
const PLACES: [&str; 6] = ["window", "shore", "hill", "church", "forest", "market"];
const TECHNIQUES: [&str; 4] = [
    "Oil on canvas, 60 x 50 cm",
    "Tempera on panel",
    "Fresco",
    "Etching, 20 x 15 cm",
];
const TYPES: [&str; 4] = ["portrait", "landscape", "religious", "genre"];
const SCHOOLS: [&str; 4] = ["Dutch", "Italian", "Spanish", "French"];
const TIMEFRAMES: [&str; 4] = ["1501-1550", "1601-1650", "1651-1700", "1851-1900"];

/// Pixel grid with a record-specific colour gradient and stripe pattern.
pub fn synthetic_pixels(rng: &mut impl Rng) -> Vec<f64> {
    let base: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let freq = rng.random_range(1..6) as f64;
    let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let mut out = Vec::with_capacity(IMAGE_LEN);
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let t = ((x as f64 / IMAGE_SIDE as f64) * freq * std::f64::consts::TAU + phase).sin();
            let g = y as f64 / IMAGE_SIDE as f64;
            for (c, b) in base.iter().enumerate() {
                let v = 0.5 * b + 0.25 * (1.0 + t) * if c == 1 { g } else { 1.0 - g };
                out.push(v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// `n` records with precomputed pixel grids, varied metadata and one
/// templated caption each. Captions are pairwise distinct.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<ArtworkRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while out.len() < n {
        let subject = SUBJECTS[rng.random_range(0..SUBJECTS.len())];
        let adjective = ADJECTIVES[rng.random_range(0..ADJECTIVES.len())];
        let place = PLACES[rng.random_range(0..PLACES.len())];
        let caption = format!("a {adjective} {subject} near the {place}");
        i += 1;
        if !seen.insert(caption.clone()) {
            continue;
        }
        let mut r = ArtworkRecord::bare(
            format!("syn{:03}", out.len()),
            format!("The {} {} by the {}", capitalize(adjective), capitalize(subject), capitalize(place)),
        );
        r.image = ImageRef::Features(synthetic_pixels(&mut rng));
        r.author = AUTHORS[rng.random_range(0..AUTHORS.len())].to_string();
        r.technique = TECHNIQUES[rng.random_range(0..TECHNIQUES.len())].to_string();
        r.type_ = TYPES[rng.random_range(0..TYPES.len())].to_string();
        r.school = SCHOOLS[rng.random_range(0..SCHOOLS.len())].to_string();
        r.timeframe = TIMEFRAMES[rng.random_range(0..TIMEFRAMES.len())].to_string();
        r.date = format!("c. {}", 1500 + i);
        r.captions = vec![Caption {
            text: caption,
            category: CaptionCategory::Visual,
        }];
        out.push(r);
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Random graph with at most `max_nodes` nodes (at least one per type),
/// random per-type embedding dimensions, artwork-metadata edges, metadata
/// cliques and the default meta-paths.
pub fn random_graph(max_nodes: usize, seed: u64) -> HeteroGraph {
    random_graph_with(max_nodes, seed, default_metapaths())
}

pub fn random_graph_with(max_nodes: usize, seed: u64, metapaths: Vec<MetaPath>) -> HeteroGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_nodes = max_nodes.max(NodeType::ALL.len());
    let total = rng.random_range(NodeType::ALL.len()..=max_nodes);
    let mut counts = [1usize; 8];
    for _ in NodeType::ALL.len()..total {
        counts[rng.random_range(0..8)] += 1;
    }
    let mut tables: [NodeTable; 8] = Default::default();
    for ty in NodeType::ALL {
        let n = counts[ty as usize];
        let dim = rng.random_range(1..5);
        tables[ty as usize] = NodeTable {
            dim,
            labels: (0..n).map(|i| format!("{}{i}", ty.name().to_lowercase())).collect(),
            embeddings: (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        };
    }
    let mut edges = Vec::new();
    for a in 0..counts[0] {
        let mut meta = Vec::new();
        for ty in NodeType::METADATA {
            if rng.random_bool(0.7) {
                meta.push(NodeRef::new(ty, rng.random_range(0..counts[ty as usize])));
            }
        }
        meta.shuffle(&mut rng);
        for (i, &m) in meta.iter().enumerate() {
            edges.push((NodeRef::new(NodeType::Artwork, a), m));
            for &o in &meta[i + 1..] {
                edges.push((m, o));
            }
        }
    }
    HeteroGraph::from_parts(tables, edges, metapaths, String::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_distinct() {
        let a = synthetic_corpus(20, 3);
        assert_eq!(a, synthetic_corpus(20, 3));
        let caps: std::collections::HashSet<_> = a.iter().map(|r| r.captions[0].text.clone()).collect();
        assert_eq!(caps.len(), 20);
    }

    #[test]
    fn random_graph_respects_bounds() {
        for seed in 0..20 {
            let g = random_graph(30, seed);
            assert!(g.num_nodes() <= 30);
            assert!(g.edges().iter().all(|e| e.a.ty != e.b.ty));
        }
    }
}
