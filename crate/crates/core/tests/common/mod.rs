//! Fixture loading shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kale_core::corpus::{extract_ngrams, parse_corpus, ArtworkRecord, CorpusFormat, NgramCaps, NgramVocab, TitleClustering};
use kale_core::embed::ProviderSet;
use kale_core::graph::{build_graph, GraphOptions, HeteroGraph};
use kale_core::text::STOPWORDS;
use serde_json::Value;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn read_json(rel: &str) -> Value {
    let text = std::fs::read_to_string(fixtures().join(rel)).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn mini_split(name: &str) -> Vec<ArtworkRecord> {
    parse_corpus(&fixtures().join("mini").join(format!("{name}.jsonl")), CorpusFormat::Jsonl).unwrap()
}

pub struct MiniGraph {
    pub records: Vec<ArtworkRecord>,
    pub vocab: NgramVocab,
    pub graph: HeteroGraph,
    pub expected: Value,
}

/// Clustering fixed by the fixture so the expected counts do not depend on k-means.
pub fn fixture_clustering(expected: &Value) -> TitleClustering {
    let assignment: BTreeMap<String, usize> = expected["clusters"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.clone(), v.as_u64().unwrap() as usize))
        .collect();
    let k = assignment.values().max().unwrap() + 1;
    let centroids = (0..k).map(|c| (0..k).map(|j| f64::from(u8::from(j == c))).collect()).collect();
    TitleClustering {
        k,
        centroids,
        assignment,
        iterations: 0,
    }
}

pub fn mini_graph() -> MiniGraph {
    let expected = read_json("mini/expected.json");
    let records = mini_split("corpus");
    let caps: Vec<usize> = expected["ngram_caps"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    let caps = NgramCaps {
        unigrams: caps[0],
        bigrams: caps[1],
        trigrams: caps[2],
    };
    let titles: Vec<&str> = records.iter().map(|r| r.title.as_str()).collect();
    let vocab = extract_ngrams(&titles, caps, Some(STOPWORDS)).unwrap();
    let clustering = fixture_clustering(&expected);
    let graph = build_graph(
        &records,
        &vocab,
        &clustering,
        &ProviderSet::hashing(16, 0),
        &GraphOptions::default(),
    )
    .unwrap();
    MiniGraph {
        records,
        vocab,
        graph,
        expected,
    }
}
