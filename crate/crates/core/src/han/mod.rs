//! Heterogeneous graph attention encoder: type-wise projection, node-level
//! attention per meta-path, multi-head aggregation and semantic attention,
//! plus per-artwork slot extraction with unseen-metadata fallbacks.

mod layers;
mod slots;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layers::{attention_head, path_neighborhood, semantic_attention, Activation, Neighborhood};
pub use slots::{plan_slots, Slot, SlotPlan, SLOT_KINDS};

use crate::graph::{HeteroGraph, NodeType};
use crate::numeric::{BoundParams, Initializer, LrGroup, NumericError, ParamError, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HanConfig {
    /// K.
    pub heads: usize,
    /// d'.
    pub head_dim: usize,
    /// d; must equal `heads * head_dim`.
    pub hidden: usize,
    pub layers: usize,
    pub semantic_dim: usize,
    pub leaky_slope: f64,
    pub activation: Activation,
    pub include_direct_edges: bool,
    pub include_metapath_neighbors: bool,
    /// n-gram slots per artwork.
    pub ngram_slots: usize,
    pub ln_eps: f64,
}

impl Default for HanConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            head_dim: 32,
            hidden: 128,
            layers: 2,
            semantic_dim: 128,
            leaky_slope: 0.2,
            activation: Activation::Elu,
            include_direct_edges: true,
            include_metapath_neighbors: true,
            ngram_slots: 4,
            ln_eps: 1e-5,
        }
    }
}

impl HanConfig {
    pub fn out_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<(), HanError> {
        let bad = |m: &str| Err(HanError::Config(m.to_string()));
        if self.heads == 0 || self.head_dim == 0 || self.layers == 0 || self.semantic_dim == 0 {
            return bad("heads, head_dim, layers and semantic_dim must be positive");
        }
        if self.hidden != self.out_dim() {
            return bad("hidden must equal heads * head_dim");
        }
        if !(self.leaky_slope.is_finite() && self.ln_eps > 0.0) {
            return bad("leaky_slope must be finite and ln_eps positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum HanError {
    #[error("no projection registered for node type {0}")]
    MissingTypeProjection(NodeType),
    #[error("graph has no meta-paths")]
    NoMetaPaths,
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Parameter ids of one type-wise projection.
#[derive(Debug, Clone, Copy)]
pub struct TypeFfn {
    pub w: ParamId,
    pub b: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone)]
struct HeadParams {
    w: ParamId,
    a: ParamId,
}

#[derive(Debug, Clone)]
struct LayerParams {
    heads: Vec<Vec<HeadParams>>,
    sem_w: ParamId,
    sem_b: ParamId,
    sem_q: ParamId,
}

/// Tape handles produced by one encoder forward pass.
#[derive(Debug, Clone)]
pub struct HanForward {
    /// `[N, K d']` final node embeddings, global node order.
    pub v_all: Var,
    /// Last layer's per-path embeddings.
    pub per_path: Vec<Var>,
    /// `[P]` semantic weights per layer.
    pub semantic: Vec<Var>,
    /// `[E, 1]` attention coefficients indexed `[layer][path][head]`.
    pub attention: Vec<Vec<Vec<Var>>>,
}

/// The graph encoder bound to one graph's node tables and neighbourhoods.
#[derive(Debug, Clone)]
pub struct HanEncoder {
    pub config: HanConfig,
    ffn: BTreeMap<NodeType, TypeFfn>,
    layers: Vec<LayerParams>,
    neighborhoods: Vec<Neighborhood>,
    path_names: Vec<String>,
    inputs: Vec<(NodeType, Tensor<f64>)>,
}

fn layer_norm_params<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, d: usize) -> Result<(ParamId, ParamId), ParamError> {
    let g = store.register(format!("{prefix}.gamma"), Tensor::filled(&[d], T::one()), LrGroup::Graph)?;
    let b = store.register(format!("{prefix}.beta"), Tensor::zeros(&[d]), LrGroup::Graph)?;
    Ok((g, b))
}

impl HanEncoder {
    /// Registers all encoder parameters under `han.` and precomputes the
    /// neighbourhood of every meta-path.
    pub fn new<T: Scalar>(
        graph: &HeteroGraph,
        config: HanConfig,
        store: &mut ParamStore<T>,
        init: &mut Initializer,
    ) -> Result<Self, HanError> {
        config.validate()?;
        if graph.metapaths().is_empty() {
            return Err(HanError::NoMetaPaths);
        }
        let d = config.hidden;
        let mut ffn = BTreeMap::new();
        let mut inputs = Vec::new();
        for ty in NodeType::ALL {
            let table = graph.table(ty);
            if table.dim == 0 {
                continue;
            }
            let prefix = format!("han.ffn.{}", ty.name().to_lowercase());
            let w = store.register(format!("{prefix}.w"), init.matrix(table.dim, d, 1.0), LrGroup::Graph)?;
            let b = store.register(format!("{prefix}.b"), Tensor::zeros(&[d]), LrGroup::Graph)?;
            let (gamma, beta) = layer_norm_params(store, &prefix, d)?;
            ffn.insert(ty, TypeFfn { w, b, gamma, beta });
            if !table.is_empty() {
                let flat: Vec<f64> = table.embeddings.iter().flatten().copied().collect();
                inputs.push((ty, Tensor::from_f64(&[table.len(), table.dim], &flat)?));
            }
        }
        for ty in NodeType::ALL {
            if graph.count(ty) > 0 && !ffn.contains_key(&ty) {
                return Err(HanError::MissingTypeProjection(ty));
            }
        }
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let d_in = if l == 0 { d } else { config.out_dim() };
            let mut heads = Vec::new();
            for p in graph.metapaths() {
                let mut per = Vec::new();
                for k in 0..config.heads {
                    let prefix = format!("han.l{l}.{}.h{k}", p.name);
                    let w = store.register(format!("{prefix}.w"), init.matrix(d_in, config.head_dim, 1.0), LrGroup::Graph)?;
                    let a = store.register(
                        format!("{prefix}.a"),
                        init.matrix(2 * config.head_dim, 1, 1.0),
                        LrGroup::Graph,
                    )?;
                    per.push(HeadParams { w, a });
                }
                heads.push(per);
            }
            let prefix = format!("han.l{l}.semantic");
            let sem_w = store.register(
                format!("{prefix}.w"),
                init.matrix(config.out_dim(), config.semantic_dim, 1.0),
                LrGroup::Graph,
            )?;
            let sem_b = store.register(format!("{prefix}.b"), Tensor::zeros(&[config.semantic_dim]), LrGroup::Graph)?;
            let sem_q = store.register(format!("{prefix}.q"), init.matrix(config.semantic_dim, 1, 1.0), LrGroup::Graph)?;
            layers.push(LayerParams {
                heads,
                sem_w,
                sem_b,
                sem_q,
            });
        }
        let neighborhoods = graph
            .metapaths()
            .iter()
            .map(|p| path_neighborhood(graph, p, config.include_direct_edges, config.include_metapath_neighbors))
            .collect();
        Ok(Self {
            config,
            ffn,
            layers,
            neighborhoods,
            path_names: graph.metapaths().iter().map(|p| p.name.clone()).collect(),
            inputs,
        })
    }

    pub fn path_names(&self) -> &[String] {
        &self.path_names
    }

    pub fn neighborhoods(&self) -> &[Neighborhood] {
        &self.neighborhoods
    }

    pub fn type_ffn(&self, ty: NodeType) -> Option<TypeFfn> {
        self.ffn.get(&ty).copied()
    }

    /// `layer_norm(x W_t + b_t)` for rows `x` of type `ty`.
    pub fn project<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        ty: NodeType,
        x: Var,
    ) -> Result<Var, HanError> {
        let f = self.ffn.get(&ty).ok_or(HanError::MissingTypeProjection(ty))?;
        let y = tape.linear(x, params[f.w], params[f.b])?;
        Ok(tape.layer_norm(y, params[f.gamma], params[f.beta], T::lit(self.config.ln_eps))?)
    }

    /// Projected `[N, d]` node matrix in global node order.
    pub fn typewise_project<T: Scalar>(&self, tape: &mut Tape<T>, params: &BoundParams) -> Result<Var, HanError> {
        let mut parts = Vec::with_capacity(self.inputs.len());
        for (ty, x) in &self.inputs {
            let x = tape.constant(Tensor::from_f64(x.shape(), x.data())?);
            parts.push(self.project(tape, params, *ty, x)?);
        }
        Ok(tape.concat(&parts, 0)?)
    }

    /// Full encoder forward over the whole graph.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &BoundParams) -> Result<HanForward, HanError> {
        let mut h = self.typewise_project(tape, params)?;
        let slope = T::lit(self.config.leaky_slope);
        let mut semantic = Vec::new();
        let mut attention = Vec::new();
        let mut per_path = Vec::new();
        for layer in &self.layers {
            per_path.clear();
            let mut layer_att = Vec::new();
            for (p, heads) in layer.heads.iter().enumerate() {
                let nb = &self.neighborhoods[p];
                let mut outs = Vec::with_capacity(heads.len());
                let mut alphas = Vec::with_capacity(heads.len());
                for hp in heads {
                    let (o, a) = attention_head(tape, h, nb, params[hp.w], params[hp.a], slope, self.config.activation)?;
                    outs.push(o);
                    alphas.push(a);
                }
                per_path.push(tape.concat(&outs, 1)?);
                layer_att.push(alphas);
            }
            let (e, v_all) = semantic_attention(
                tape,
                &per_path,
                params[layer.sem_w],
                params[layer.sem_b],
                params[layer.sem_q],
            )?;
            semantic.push(e);
            attention.push(layer_att);
            h = v_all;
        }
        Ok(HanForward {
            v_all: h,
            per_path,
            semantic,
            attention,
        })
    }
}

#[cfg(test)]
mod tests;
