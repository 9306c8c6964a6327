mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{fixtures, mini_graph, mini_split, read_json};
use kale_core::corpus::{clean_technique, dedup_training_split, DedupOptions};
use kale_core::graph::{metapath_neighbors, write_graph_bytes, MetaPath, NodeRef, NodeType};
use kale_core::metrics::{evaluate_files, Metric};
use kale_core::text::normalize_caption;

#[test]
fn technique_cleaning_matches_fixture() {
    let cases = read_json("technique.json");
    let cases = cases.as_array().unwrap();
    assert_eq!(cases.len(), 30);
    for c in cases {
        let raw = c["raw"].as_str().unwrap();
        assert_eq!(clean_technique(raw), c["clean"].as_str().unwrap(), "{raw}");
    }
}

#[test]
fn ngram_ranking_matches_fixture() {
    let m = mini_graph();
    for n in 1..=3 {
        let want: Vec<(String, usize)> = m.expected["top10"][n.to_string()]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| (p[0].as_str().unwrap().to_string(), p[1].as_u64().unwrap() as usize))
            .collect();
        let got: Vec<(String, usize)> = m
            .vocab
            .ranked(n)
            .into_iter()
            .take(10)
            .map(|(g, e)| (g.to_string(), e.frequency))
            .collect();
        assert_eq!(got, want, "order {n}");
    }
}

#[test]
fn graph_counts_match_brute_force_builder() {
    let m = mini_graph();
    let stats = m.graph.stats();
    for (ty, count) in m.expected["nodes"].as_object().unwrap() {
        let ty = NodeType::parse(ty).unwrap();
        assert_eq!(m.graph.count(ty) as u64, count.as_u64().unwrap(), "{ty}");
    }
    assert_eq!(stats.edges as u64, m.expected["edges"].as_u64().unwrap());
    let want: BTreeMap<String, usize> = m.expected["edges_per_relation"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.clone(), v.as_u64().unwrap() as usize))
        .collect();
    assert_eq!(stats.edges_by_relation, want);
}

#[test]
fn graph_build_is_byte_identical() {
    let a = write_graph_bytes(&mini_graph().graph);
    let b = write_graph_bytes(&mini_graph().graph);
    assert_eq!(a, b);
}

#[test]
fn no_same_type_edges() {
    let g = mini_graph().graph;
    assert!(g.edges().iter().all(|e| e.a.ty != e.b.ty));
    for n in g.nodes() {
        assert!(g.neighbors(n).iter().all(|m| m.ty != n.ty));
    }
}

#[test]
fn metapath_neighbours_match_brute_force() {
    let g = mini_graph().graph;
    let edges: BTreeSet<(NodeRef, NodeRef)> = g.edges().iter().flat_map(|e| [(e.a, e.b), (e.b, e.a)]).collect();
    for path in g.metapaths() {
        let head = path.head();
        for start in g.nodes().filter(|n| n.ty == head) {
            // enumerate every typed walk by scanning all nodes at each hop
            let mut walks = vec![start];
            for &ty in &path.types[1..] {
                walks = walks
                    .iter()
                    .flat_map(|&u| g.nodes().filter(move |v| v.ty == ty).filter(|v| edges.contains(&(u, *v))).collect::<Vec<_>>())
                    .collect();
            }
            let mut want: BTreeSet<NodeRef> = walks.into_iter().collect();
            want.remove(&start);
            assert_eq!(metapath_neighbors(&g, path, start).unwrap(), want, "{}", path.name);
        }
    }
    let p = MetaPath::parse("Type-Ngram-Type").unwrap();
    assert!(metapath_neighbors(&g, &p, NodeRef::new(NodeType::Artwork, 0)).is_err());
}

#[test]
fn dedup_removes_planted_overlaps() {
    let (train, val, test) = (mini_split("corpus"), mini_split("val"), mini_split("test"));
    let (clean, report) = dedup_training_split(&train, &val, &test, DedupOptions::default());
    let planted: BTreeSet<String> = read_json("mini/expected.json")["planted_duplicates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let removed: BTreeSet<String> = report.removals.iter().map(|r| r.record_id.clone()).collect();
    assert_eq!(removed, planted);
    assert_eq!(report.removals.len(), 4);
    let held: BTreeSet<String> = val
        .iter()
        .chain(&test)
        .flat_map(|r| r.captions.iter().map(|c| normalize_caption(&c.text)))
        .collect();
    for r in &clean {
        for c in &r.captions {
            assert!(!held.contains(&normalize_caption(&c.text)));
        }
    }
}

#[test]
fn evaluation_matches_reference_implementation() {
    let dir = fixtures().join("mini_eval");
    let report = evaluate_files(
        &dir.join("preds.jsonl"),
        &dir.join("refs.jsonl"),
        &[Metric::Bleu, Metric::Rouge, Metric::Cider],
    )
    .unwrap();
    let want = read_json("mini_eval/expected.json");
    for (k, v) in want["corpus"].as_object().unwrap() {
        let got = report.corpus[k];
        assert!((got - v.as_f64().unwrap()).abs() < 1e-9, "{k}: {got} vs {v}");
    }
    for item in &report.items {
        for (k, v) in want["items"][&item.id].as_object().unwrap() {
            assert!((item.scores[k] - v.as_f64().unwrap()).abs() < 1e-9, "{} {k}", item.id);
        }
    }
    assert_eq!(report.skipped_ids, vec!["e6".to_string()]);
}
