use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{GraphError, HeteroGraph, NodeRef, NodeType};

/// A typed walk pattern such as Artwork-Author-Artwork.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetaPath {
    pub name: String,
    pub types: Vec<NodeType>,
}

impl MetaPath {
    /// At least three types, no two consecutive types equal.
    pub fn new(types: Vec<NodeType>) -> Result<Self, GraphError> {
        let name = types.iter().map(|t| t.name()).collect::<Vec<_>>().join("-");
        if types.len() < 3 || types.windows(2).any(|w| w[0] == w[1]) {
            return Err(GraphError::InvalidMetaPath(name));
        }
        Ok(Self { name, types })
    }

    /// Parses a dash-separated list of type names.
    pub fn parse(s: &str) -> Result<Self, GraphError> {
        let types = s
            .split('-')
            .map(|p| NodeType::parse(p).ok_or_else(|| GraphError::InvalidMetaPath(s.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(types)
    }

    pub fn head(&self) -> NodeType {
        self.types[0]
    }

    /// Symmetric paths start and end at the same type.
    pub fn is_symmetric(&self) -> bool {
        let n = self.types.len();
        (0..n / 2).all(|i| self.types[i] == self.types[n - 1 - i])
    }
}

/// One Artwork-X-Artwork path per metadata layer plus Type-Ngram-Type.
pub fn default_metapaths() -> Vec<MetaPath> {
    use NodeType::*;
    let mut paths: Vec<MetaPath> = [Author, Timeframe, Type, School, Ngram, Cluster, Technique]
        .into_iter()
        .map(|t| MetaPath::new(vec![Artwork, t, Artwork]).expect("valid"))
        .collect();
    paths.push(MetaPath::new(vec![Type, Ngram, Type]).expect("valid"));
    paths
}

/// Nodes reachable from `start` by walking edges whose endpoint types follow
/// the path, excluding `start` itself.
pub fn metapath_neighbors(
    graph: &HeteroGraph,
    path: &MetaPath,
    start: NodeRef,
) -> Result<BTreeSet<NodeRef>, GraphError> {
    if start.ty != path.head() {
        return Err(GraphError::TypeMismatch {
            path: path.name.clone(),
            expected: path.head(),
            got: start.ty,
        });
    }
    let mut frontier = BTreeSet::from([start]);
    for &ty in &path.types[1..] {
        frontier = frontier
            .iter()
            .flat_map(|n| graph.neighbors(*n).iter().copied().filter(|m| m.ty == ty))
            .collect();
    }
    frontier.remove(&start);
    Ok(frontier)
}
