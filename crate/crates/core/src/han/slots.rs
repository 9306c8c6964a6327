use std::collections::BTreeSet;

use super::{HanEncoder, HanError};
use crate::corpus::{clean_technique, ngram_strings, ArtworkRecord};
use crate::embed::TextEmbedder;
use crate::graph::{HeteroGraph, NodeRef, NodeType};
use crate::numeric::{BoundParams, Scalar, Tape, Tensor, Var};
use crate::text::{is_stopword, tokenize};

/// Slot types in order; the n-gram entry repeats `ngram_slots` times.
pub const SLOT_KINDS: [NodeType; 7] = [
    NodeType::Author,
    NodeType::Ngram,
    NodeType::Cluster,
    NodeType::Technique,
    NodeType::Type,
    NodeType::School,
    NodeType::Timeframe,
];

#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    /// In-graph node, by global index.
    Node(usize),
    /// Unseen value: provider vector to pass through the type's projection.
    Fallback { ty: NodeType, input: Vec<f64> },
    /// Absent or unseen categorical value.
    Zero,
}

impl Slot {
    pub fn is_present(&self) -> bool {
        !matches!(self, Slot::Zero)
    }
}

/// Resolved slot sources of one record, in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotPlan {
    pub slots: Vec<Slot>,
}

impl SlotPlan {
    pub fn present(&self) -> Vec<bool> {
        self.slots.iter().map(Slot::is_present).collect()
    }
}

fn lookup_or_fallback(graph: &HeteroGraph, text: &dyn TextEmbedder, ty: NodeType, label: &str) -> Slot {
    let label = label.trim();
    if label.is_empty() {
        return Slot::Zero;
    }
    match graph.find(ty, label) {
        Some(n) => Slot::Node(graph.global(n)),
        None => Slot::Fallback {
            ty,
            input: text.embed(label),
        },
    }
}

fn lookup_or_zero(graph: &HeteroGraph, ty: NodeType, label: &str) -> Slot {
    match graph.find(ty, label.trim()) {
        Some(n) => Slot::Node(graph.global(n)),
        None => Slot::Zero,
    }
}

fn cluster_slot(graph: &HeteroGraph, text: &dyn TextEmbedder, record: &ArtworkRecord) -> Slot {
    if let Some(a) = graph.find(NodeType::Artwork, &record.id) {
        if let Some(c) = graph.neighbors(a).iter().find(|n| n.ty == NodeType::Cluster) {
            return Slot::Node(graph.global(*c));
        }
    }
    let table = graph.table(NodeType::Cluster);
    if table.is_empty() || table.dim != text.dim() {
        return Slot::Zero;
    }
    let v = text.embed(&record.title);
    let mut best = (0, f64::NEG_INFINITY);
    for (c, centroid) in table.embeddings.iter().enumerate() {
        let s: f64 = centroid.iter().zip(&v).map(|(a, b)| a * b).sum();
        if s > best.1 {
            best = (c, s);
        }
    }
    Slot::Node(graph.global(NodeRef::new(NodeType::Cluster, best.0)))
}

/// Resolves every slot of `record`: in-graph metadata map to their nodes;
/// unseen author, n-gram and technique values fall back to the text
/// provider; unseen categorical values and missing fields become zero slots.
/// Title n-gram slots take in-graph n-grams by priority, then out-of-graph
/// non-stopword words, then zero padding.
pub fn plan_slots(graph: &HeteroGraph, text: &dyn TextEmbedder, record: &ArtworkRecord, ngram_slots: usize) -> SlotPlan {
    let mut slots = vec![lookup_or_fallback(graph, text, NodeType::Author, &record.author)];

    let tokens = tokenize(&record.title);
    let mut in_graph: BTreeSet<usize> = BTreeSet::new();
    for n in 1..=3 {
        for g in ngram_strings(&tokens, n, |_| true) {
            if let Some(node) = graph.find(NodeType::Ngram, &g) {
                in_graph.insert(node.index);
            }
        }
    }
    let mut grams: Vec<Slot> = in_graph
        .into_iter()
        .take(ngram_slots)
        .map(|i| Slot::Node(graph.global(NodeRef::new(NodeType::Ngram, i))))
        .collect();
    let mut seen = BTreeSet::new();
    for t in &tokens {
        if grams.len() >= ngram_slots {
            break;
        }
        if !is_stopword(t) && graph.find(NodeType::Ngram, t).is_none() && seen.insert(t.clone()) {
            grams.push(Slot::Fallback {
                ty: NodeType::Ngram,
                input: text.embed(t),
            });
        }
    }
    grams.resize(ngram_slots, Slot::Zero);
    slots.extend(grams);

    slots.push(cluster_slot(graph, text, record));
    slots.push(lookup_or_fallback(
        graph,
        text,
        NodeType::Technique,
        &clean_technique(&record.technique),
    ));
    slots.push(lookup_or_zero(graph, NodeType::Type, &record.type_));
    slots.push(lookup_or_zero(graph, NodeType::School, &record.school));
    slots.push(lookup_or_zero(graph, NodeType::Timeframe, &record.timeframe));
    SlotPlan { slots }
}

impl HanEncoder {
    pub fn num_slots(&self) -> usize {
        6 + self.config.ngram_slots
    }

    /// `[slots, K d']` graph embedding of one record plus its presence mask.
    pub fn slot_matrix<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        v_all: Var,
        plan: &SlotPlan,
    ) -> Result<Var, HanError> {
        let d = self.config.out_dim();
        let mut rows = Vec::with_capacity(plan.slots.len());
        for slot in &plan.slots {
            rows.push(match slot {
                Slot::Node(g) => tape.gather_rows(v_all, vec![*g].into())?,
                Slot::Fallback { ty, input } => {
                    let x = tape.constant(Tensor::from_f64(&[1, input.len()], input)?);
                    self.project(tape, params, *ty, x)?
                }
                Slot::Zero => tape.constant(Tensor::zeros(&[1, d])),
            });
        }
        Ok(tape.concat(&rows, 0)?)
    }
}
