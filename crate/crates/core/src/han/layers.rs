use std::collections::BTreeSet;
use std::rc::Rc;

use crate::graph::{metapath_neighbors, HeteroGraph, MetaPath, NodeType};
use crate::numeric::{NumericError, Scalar, Tape, Var};

/// Attention neighbourhoods in CSR form over the global node order. Edge slot
/// `e` in `offsets[i]..offsets[i+1]` attends from node `src[e] = i` to `nbr[e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub offsets: Rc<[usize]>,
    pub src: Rc<[usize]>,
    pub nbr: Rc<[usize]>,
}

impl Neighborhood {
    /// Builds from per-node lists; each node's own index is added if missing.
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = vec![0];
        let mut src = Vec::new();
        let mut nbr = Vec::new();
        for (i, list) in lists.iter().enumerate() {
            let set: BTreeSet<usize> = list.iter().copied().chain([i]).collect();
            for j in set {
                src.push(i);
                nbr.push(j);
            }
            offsets.push(nbr.len());
        }
        Self {
            offsets: offsets.into(),
            src: src.into(),
            nbr: nbr.into(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_slots(&self) -> usize {
        self.nbr.len()
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.nbr[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// N_P(i): the node itself, its direct neighbours whose type occurs in the
/// path and, for nodes of the path's head type, its meta-path neighbours.
pub fn path_neighborhood(graph: &HeteroGraph, path: &MetaPath, direct: bool, via_path: bool) -> Neighborhood {
    let types: BTreeSet<NodeType> = path.types.iter().copied().collect();
    let lists: Vec<Vec<usize>> = graph
        .nodes()
        .map(|n| {
            let mut list = Vec::new();
            if direct && types.contains(&n.ty) {
                list.extend(graph.neighbors(n).iter().filter(|m| types.contains(&m.ty)).map(|m| graph.global(*m)));
            }
            if via_path && n.ty == path.head() {
                let reach = metapath_neighbors(graph, path, n).expect("head type checked");
                list.extend(reach.into_iter().map(|m| graph.global(m)));
            }
            list
        })
        .collect();
    Neighborhood::from_lists(&lists)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, tape: &mut Tape<T>, x: Var) -> Var {
        match self {
            Activation::Elu => tape.elu(x, T::one()),
            Activation::Identity => x,
        }
    }
}

/// One attention head: returns the aggregated `[N, d']` output (after the
/// activation) and the `[E, 1]` attention coefficients.
///
/// `a` has shape `[2d', 1]`; its first half scores the attending node, the
/// second half the neighbour.
pub fn attention_head<T: Scalar>(
    tape: &mut Tape<T>,
    h: Var,
    nb: &Neighborhood,
    w: Var,
    a: Var,
    slope: T,
    act: Activation,
) -> Result<(Var, Var), NumericError> {
    let z = tape.matmul(h, w)?;
    let dp = tape.shape(w)[1];
    let a_left = tape.slice(a, 0, 0, dp)?;
    let a_right = tape.slice(a, 0, dp, dp)?;
    let s_left = tape.matmul(z, a_left)?;
    let s_right = tape.matmul(z, a_right)?;
    let e_left = tape.gather_rows(s_left, nb.src.clone())?;
    let e_right = tape.gather_rows(s_right, nb.nbr.clone())?;
    let e = tape.add(e_left, e_right)?;
    let e = tape.leaky_relu(e, slope);
    let alpha = tape.segment_softmax(e, nb.offsets.clone())?;
    let zj = tape.gather_rows(z, nb.nbr.clone())?;
    let weighted = tape.mul_col(zj, alpha)?;
    let agg = tape.segment_sum(weighted, nb.offsets.clone())?;
    Ok((act.apply(tape, agg), alpha))
}

/// Meta-path-level attention. Returns the `[P]` weights and the weighted sum
/// of the per-path embeddings.
pub fn semantic_attention<T: Scalar>(
    tape: &mut Tape<T>,
    per_path: &[Var],
    w: Var,
    b: Var,
    q: Var,
) -> Result<(Var, Var), NumericError> {
    if per_path.is_empty() {
        return Err(NumericError::ShapeMismatch {
            op: "semantic_attention",
            left: vec![0],
            right: vec![],
        });
    }
    let mut scores = Vec::with_capacity(per_path.len());
    for &v in per_path {
        let t = tape.linear(v, w, b)?;
        let t = tape.tanh(t);
        let m = tape.mean(t, 0)?;
        let s = tape.shape(m)[0];
        let m = tape.reshape(m, &[1, s])?;
        let score = tape.matmul(m, q)?;
        scores.push(tape.reshape(score, &[1])?);
    }
    let w_p = tape.concat(&scores, 0)?;
    let e = tape.softmax(w_p, 0)?;
    let mut total = None;
    for (p, &v) in per_path.iter().enumerate() {
        let ep = tape.slice(e, 0, p, 1)?;
        let term = tape.mul_scalar(v, ep)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok((e, total.expect("at least one path")))
}
