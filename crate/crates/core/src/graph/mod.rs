//! Multi-layer heterogeneous graph of artworks and their metadata.

mod build;
mod io;
mod metapath;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use build::{build_graph, cluster_label, metadata_labels, GraphOptions, MetadataLabels};
pub use io::{export_json, load_graph, read_graph_bytes, serialize_graph, write_graph_bytes, MAGIC};
pub use metapath::{default_metapaths, metapath_neighbors, MetaPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    Artwork,
    Author,
    Ngram,
    Cluster,
    Technique,
    Type,
    School,
    Timeframe,
}

impl NodeType {
    pub const ALL: [NodeType; 8] = [
        NodeType::Artwork,
        NodeType::Author,
        NodeType::Ngram,
        NodeType::Cluster,
        NodeType::Technique,
        NodeType::Type,
        NodeType::School,
        NodeType::Timeframe,
    ];

    pub const METADATA: [NodeType; 7] = [
        NodeType::Author,
        NodeType::Ngram,
        NodeType::Cluster,
        NodeType::Technique,
        NodeType::Type,
        NodeType::School,
        NodeType::Timeframe,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeType::Artwork => "Artwork",
            NodeType::Author => "Author",
            NodeType::Ngram => "Ngram",
            NodeType::Cluster => "Cluster",
            NodeType::Technique => "Technique",
            NodeType::Type => "Type",
            NodeType::School => "School",
            NodeType::Timeframe => "Timeframe",
        }
    }

    /// Case-insensitive; accepts a few plural/long aliases.
    pub fn parse(s: &str) -> Option<Self> {
        let l = s.trim().to_lowercase();
        let l = match l.as_str() {
            "ngrams" | "ngramkeyword" | "keyword" => "ngram",
            "titlecluster" | "clusters" => "cluster",
            "authors" => "author",
            other => other,
        };
        Self::ALL.into_iter().find(|t| t.name().to_lowercase() == l)
    }

    /// Categorical types embedded as one-hot vectors.
    pub fn is_categorical(self) -> bool {
        matches!(self, NodeType::Type | NodeType::School | NodeType::Timeframe)
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub ty: NodeType,
    pub index: usize,
}

impl NodeRef {
    pub fn new(ty: NodeType, index: usize) -> Self {
        Self { ty, index }
    }
}

/// Undirected edge stored once with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub a: NodeRef,
    pub b: NodeRef,
}

impl Edge {
    /// Canonical edge, or `None` for a same-type pair.
    pub fn new(x: NodeRef, y: NodeRef) -> Option<Self> {
        if x.ty == y.ty {
            return None;
        }
        Some(if x < y { Self { a: x, b: y } } else { Self { a: y, b: x } })
    }

    pub fn relation(&self) -> String {
        format!("{}-{}", self.a.ty.name().to_lowercase(), self.b.ty.name().to_lowercase())
    }
}

/// Labels and initial embeddings of one node type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeTable {
    pub dim: usize,
    pub labels: Vec<String>,
    pub embeddings: Vec<Vec<f64>>,
}

impl NodeTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("embedding provider failed for node {0}")]
    ProviderFailure(String),
    #[error("category `{label}` was never observed for {ty}")]
    UnknownCategory { ty: NodeType, label: String },
    #[error("start node is {got}, meta-path `{path}` starts at {expected}")]
    TypeMismatch { path: String, expected: NodeType, got: NodeType },
    #[error("invalid meta-path `{0}`")]
    InvalidMetaPath(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("record `{0}` has no cluster assignment")]
    MissingCluster(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a graph file of this version (bad magic or version)")]
    SchemaVersionMismatch,
    #[error("checksum mismatch in section {0}")]
    Checksum(u8),
    #[error("truncated or malformed graph file: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: BTreeMap<String, usize>,
    pub total_nodes: usize,
    pub edges: usize,
    pub edges_by_relation: BTreeMap<String, usize>,
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for ty in NodeType::ALL {
            writeln!(f, "{:<10} {}", ty.name(), self.nodes.get(ty.name()).copied().unwrap_or(0))?;
        }
        writeln!(f, "{:<10} {}", "nodes", self.total_nodes)?;
        write!(f, "{:<10} {}", "edges", self.edges)
    }
}

/// Immutable heterogeneous graph. Adjacency is derived from the edge list.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    tables: [NodeTable; 8],
    edges: Vec<Edge>,
    metapaths: Vec<MetaPath>,
    provider_descriptor: String,
    offsets: [usize; 9],
    adjacency: Vec<Vec<NodeRef>>,
    lookup: HashMap<(NodeType, String), usize>,
}

impl PartialEq for HeteroGraph {
    fn eq(&self, other: &Self) -> bool {
        self.tables == other.tables
            && self.edges == other.edges
            && self.metapaths == other.metapaths
            && self.provider_descriptor == other.provider_descriptor
    }
}

impl HeteroGraph {
    /// Assembles a graph; edges are canonicalized, de-duplicated and sorted,
    /// and same-type pairs are discarded.
    pub fn from_parts(
        tables: [NodeTable; 8],
        edges: impl IntoIterator<Item = (NodeRef, NodeRef)>,
        metapaths: Vec<MetaPath>,
        provider_descriptor: String,
    ) -> Self {
        let mut edges: Vec<Edge> = edges.into_iter().filter_map(|(x, y)| Edge::new(x, y)).collect();
        edges.sort_unstable();
        edges.dedup();
        let mut offsets = [0usize; 9];
        for (i, t) in tables.iter().enumerate() {
            offsets[i + 1] = offsets[i] + t.len();
        }
        let mut adjacency = vec![Vec::new(); offsets[8]];
        for e in &edges {
            adjacency[offsets[e.a.ty as usize] + e.a.index].push(e.b);
            adjacency[offsets[e.b.ty as usize] + e.b.index].push(e.a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let mut lookup = HashMap::new();
        for ty in NodeType::ALL {
            for (i, l) in tables[ty as usize].labels.iter().enumerate() {
                lookup.entry((ty, l.clone())).or_insert(i);
            }
        }
        Self {
            tables,
            edges,
            metapaths,
            provider_descriptor,
            offsets,
            adjacency,
            lookup,
        }
    }

    pub fn table(&self, ty: NodeType) -> &NodeTable {
        &self.tables[ty as usize]
    }

    pub fn tables(&self) -> &[NodeTable; 8] {
        &self.tables
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn metapaths(&self) -> &[MetaPath] {
        &self.metapaths
    }

    pub fn metapath(&self, name: &str) -> Option<&MetaPath> {
        let wanted = MetaPath::parse(name).ok()?;
        self.metapaths.iter().find(|p| p.types == wanted.types)
    }

    pub fn provider_descriptor(&self) -> &str {
        &self.provider_descriptor
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets[8]
    }

    pub fn count(&self, ty: NodeType) -> usize {
        self.tables[ty as usize].len()
    }

    /// Position of `n` in the global order (types in tag order).
    pub fn global(&self, n: NodeRef) -> usize {
        self.offsets[n.ty as usize] + n.index
    }

    pub fn node_at(&self, global: usize) -> NodeRef {
        let t = (0..8).rfind(|&t| self.offsets[t] <= global && self.offsets[t + 1] > global)
            .expect("global index in range");
        NodeRef::new(NodeType::ALL[t], global - self.offsets[t])
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        NodeType::ALL
            .into_iter()
            .flat_map(move |ty| (0..self.count(ty)).map(move |i| NodeRef::new(ty, i)))
    }

    pub fn label(&self, n: NodeRef) -> &str {
        &self.tables[n.ty as usize].labels[n.index]
    }

    pub fn embedding(&self, n: NodeRef) -> &[f64] {
        &self.tables[n.ty as usize].embeddings[n.index]
    }

    pub fn find(&self, ty: NodeType, label: &str) -> Option<NodeRef> {
        self.lookup.get(&(ty, label.to_string())).map(|&i| NodeRef::new(ty, i))
    }

    /// Resolves `Type:label` (type name case-insensitive) or a bare artwork id.
    pub fn resolve(&self, spec: &str) -> Result<NodeRef, GraphError> {
        let found = match spec.split_once(':') {
            Some((ty, label)) => NodeType::parse(ty).and_then(|t| self.find(t, label)),
            None => None,
        };
        found
            .or_else(|| self.find(NodeType::Artwork, spec))
            .ok_or_else(|| GraphError::UnknownNode(spec.to_string()))
    }

    pub fn neighbors(&self, n: NodeRef) -> &[NodeRef] {
        &self.adjacency[self.global(n)]
    }

    pub fn degree(&self, n: NodeRef) -> usize {
        self.neighbors(n).len()
    }

    /// Metadata nodes linked to an artwork.
    pub fn artwork_links(&self, artwork: usize) -> Vec<NodeRef> {
        self.neighbors(NodeRef::new(NodeType::Artwork, artwork)).to_vec()
    }

    /// One-hot vector for a categorical label observed at build time.
    pub fn categorical_embedding(&self, ty: NodeType, label: &str) -> Result<Vec<f64>, GraphError> {
        let unknown = || GraphError::UnknownCategory {
            ty,
            label: label.to_string(),
        };
        if !ty.is_categorical() {
            return Err(unknown());
        }
        let node = self.find(ty, label).ok_or_else(unknown)?;
        Ok(self.embedding(node).to_vec())
    }

    pub fn stats(&self) -> GraphStats {
        let mut edges_by_relation = BTreeMap::new();
        for e in &self.edges {
            *edges_by_relation.entry(e.relation()).or_insert(0) += 1;
        }
        GraphStats {
            nodes: NodeType::ALL.iter().map(|t| (t.name().to_string(), self.count(*t))).collect(),
            total_nodes: self.num_nodes(),
            edges: self.edges.len(),
            edges_by_relation,
        }
    }

    /// A graph with no nodes, edges or meta-paths.
    pub fn empty() -> Self {
        Self::from_parts(Default::default(), [], Vec::new(), String::new())
    }
}

pub fn graph_stats(graph: &HeteroGraph) -> GraphStats {
    graph.stats()
}
