use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{default_metapaths, GraphError, HeteroGraph, NodeRef, NodeTable, NodeType};
use crate::corpus::{clean_technique, ArtworkRecord, NgramVocab, TitleClustering};
use crate::embed::{load_pixels, ProviderSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphOptions {
    /// Limit on n-gram links per artwork (highest priority first).
    pub max_title_ngrams: Option<usize>,
    /// Link every pair of differently typed metadata nodes of one artwork.
    pub clique: bool,
    /// Type pairs left out of the metadata clique.
    pub clique_excluded: Vec<(NodeType, NodeType)>,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            max_title_ngrams: None,
            clique: true,
            clique_excluded: Vec::new(),
        }
    }
}

impl GraphOptions {
    fn clique_allows(&self, x: NodeType, y: NodeType) -> bool {
        self.clique
            && x != y
            && !self
                .clique_excluded
                .iter()
                .any(|&(p, q)| (p, q) == (x, y) || (p, q) == (y, x))
    }
}

/// Metadata values of one record as they appear as node labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetadataLabels {
    pub author: Option<String>,
    /// Vocabulary n-grams of the title in priority order.
    pub ngrams: Vec<String>,
    pub cluster: Option<usize>,
    pub technique: Option<String>,
    pub type_: Option<String>,
    pub school: Option<String>,
    pub timeframe: Option<String>,
}

fn non_empty(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

pub fn cluster_label(c: usize) -> String {
    format!("cluster-{c}")
}

pub fn metadata_labels(record: &ArtworkRecord, vocab: &NgramVocab, clustering: &TitleClustering) -> MetadataLabels {
    MetadataLabels {
        author: non_empty(&record.author),
        ngrams: vocab.grams_in_title(&record.title),
        cluster: clustering.cluster_of(&record.id),
        technique: non_empty(&clean_technique(&record.technique)),
        type_: non_empty(&record.type_),
        school: non_empty(&record.school),
        timeframe: non_empty(&record.timeframe),
    }
}

fn sorted_table(values: BTreeSet<String>) -> NodeTable {
    NodeTable {
        dim: 0,
        labels: values.into_iter().collect(),
        embeddings: Vec::new(),
    }
}

fn one_hot(table: &mut NodeTable) {
    let n = table.len();
    table.dim = n;
    table.embeddings = (0..n)
        .map(|i| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            v
        })
        .collect();
}

/// Builds the graph: one artwork node per record (record order), one node
/// per distinct metadata value (sorted by label), one per vocabulary n-gram
/// (priority order) and one per cluster, with artwork-metadata edges and
/// metadata cliques per artwork.
pub fn build_graph(
    records: &[ArtworkRecord],
    vocab: &NgramVocab,
    clustering: &TitleClustering,
    providers: &ProviderSet,
    opts: &GraphOptions,
) -> Result<HeteroGraph, GraphError> {
    let labels: Vec<MetadataLabels> = records
        .iter()
        .map(|r| {
            let mut l = metadata_labels(r, vocab, clustering);
            if l.cluster.is_none() {
                return Err(GraphError::MissingCluster(r.id.clone()));
            }
            if let Some(cap) = opts.max_title_ngrams {
                l.ngrams.truncate(cap);
            }
            Ok(l)
        })
        .collect::<Result<_, _>>()?;

    let collect = |f: fn(&MetadataLabels) -> &Option<String>| -> BTreeSet<String> {
        labels.iter().filter_map(|l| f(l).clone()).collect()
    };
    let mut tables: [NodeTable; 8] = Default::default();
    tables[NodeType::Author as usize] = sorted_table(collect(|l| &l.author));
    tables[NodeType::Technique as usize] = sorted_table(collect(|l| &l.technique));
    tables[NodeType::Type as usize] = sorted_table(collect(|l| &l.type_));
    tables[NodeType::School as usize] = sorted_table(collect(|l| &l.school));
    tables[NodeType::Timeframe as usize] = sorted_table(collect(|l| &l.timeframe));
    tables[NodeType::Ngram as usize] = NodeTable {
        dim: 0,
        labels: vocab.priority_order().into_iter().map(|(s, _)| s.to_string()).collect(),
        embeddings: Vec::new(),
    };

    let text_dim = providers.text.dim();
    for ty in [NodeType::Author, NodeType::Ngram, NodeType::Technique] {
        let t = &mut tables[ty as usize];
        t.dim = text_dim;
        t.embeddings = t.labels.iter().map(|l| providers.text.embed(l)).collect();
    }
    for ty in [NodeType::Type, NodeType::School, NodeType::Timeframe] {
        one_hot(&mut tables[ty as usize]);
    }
    tables[NodeType::Cluster as usize] = NodeTable {
        dim: clustering.dim(),
        labels: (0..clustering.k).map(cluster_label).collect(),
        embeddings: clustering.centroids.clone(),
    };
    let art = &mut tables[NodeType::Artwork as usize];
    art.dim = providers.image.dim();
    for r in records {
        let px = load_pixels(&r.image).map_err(|e| GraphError::ProviderFailure(format!("{}: {e}", r.id)))?;
        art.labels.push(r.id.clone());
        art.embeddings.push(providers.image.embed(&px));
    }

    let index_of = |ty: NodeType, label: &str, tables: &[NodeTable; 8]| -> NodeRef {
        let t = &tables[ty as usize];
        let i = if ty == NodeType::Ngram {
            t.labels.iter().position(|l| l == label)
        } else {
            t.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
        };
        NodeRef::new(ty, i.expect("label collected above"))
    };
    let ngram_pos: std::collections::HashMap<&str, usize> = tables[NodeType::Ngram as usize]
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut edges = Vec::new();
    for (a, l) in labels.iter().enumerate() {
        let artwork = NodeRef::new(NodeType::Artwork, a);
        let mut meta = Vec::new();
        let single = [
            (NodeType::Author, &l.author),
            (NodeType::Technique, &l.technique),
            (NodeType::Type, &l.type_),
            (NodeType::School, &l.school),
            (NodeType::Timeframe, &l.timeframe),
        ];
        for (ty, v) in single {
            if let Some(v) = v {
                meta.push(index_of(ty, v, &tables));
            }
        }
        for g in &l.ngrams {
            meta.push(NodeRef::new(NodeType::Ngram, ngram_pos[g.as_str()]));
        }
        if let Some(c) = l.cluster {
            meta.push(NodeRef::new(NodeType::Cluster, c));
        }
        for (i, &m) in meta.iter().enumerate() {
            edges.push((artwork, m));
            for &o in &meta[i + 1..] {
                if opts.clique_allows(m.ty, o.ty) {
                    edges.push((m, o));
                }
            }
        }
    }
    Ok(HeteroGraph::from_parts(tables, edges, default_metapaths(), providers.descriptor()))
}
