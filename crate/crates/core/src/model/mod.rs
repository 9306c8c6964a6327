//! Toy captioning stack: patch vision encoder, metadata text encoder, fusion
//! encoder over image, text and graph slots, and an autoregressive decoder.

mod beam;
mod transformer;
mod vocab;

use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use beam::{beam_search, greedy, normalized_score, BeamConfig, Hypothesis};
pub use transformer::{causal_mask, AttentionParams, BlockParams, LayerNormParams, LinearParams, Ops, Registrar};
pub use vocab::{metadata_fields, Vocabulary, BOS, EOS, MARKERS, PAD, SPECIALS, UNK};

use crate::corpus::ArtworkRecord;
use crate::embed::{load_pixels, EmbedError, ProviderSet, IMAGE_CHANNELS, IMAGE_SIDE};
use crate::graph::HeteroGraph;
use crate::han::{plan_slots, HanConfig, HanEncoder, HanError, HanForward, SlotPlan};
use crate::numeric::{BoundParams, Initializer, LrGroup, NumericError, ParamError, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub vision_blocks: usize,
    pub text_blocks: usize,
    pub fusion_blocks: usize,
    pub decoder_blocks: usize,
    pub patch_size: usize,
    /// Decoder positions, counting BOS.
    pub max_caption_len: usize,
    pub field_max_tokens: usize,
    pub min_freq: usize,
    /// Feed graph slots to the fusion encoder.
    pub use_graph: bool,
    pub zero_output_init: bool,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            heads: 4,
            ffn_mult: 2,
            vision_blocks: 2,
            text_blocks: 2,
            fusion_blocks: 2,
            decoder_blocks: 2,
            patch_size: 8,
            max_caption_len: 32,
            field_max_tokens: 8,
            min_freq: 2,
            use_graph: true,
            zero_output_init: false,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn num_patches(&self) -> usize {
        (IMAGE_SIDE / self.patch_size).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * IMAGE_CHANNELS
    }

    pub fn max_text_len(&self) -> usize {
        MARKERS.len() * (1 + self.field_max_tokens)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.patch_size == 0 || IMAGE_SIDE % self.patch_size != 0 {
            return bad("patch_size must divide 64");
        }
        if self.max_caption_len < 2 || self.ffn_mult == 0 || self.ln_eps <= 0.0 {
            return bad("max_caption_len >= 2, ffn_mult >= 1 and ln_eps > 0 required");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("prefix of length {len} exceeds the maximum of {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("record `{id}`: {source}")]
    UndecodableImage {
        id: String,
        #[source]
        source: EmbedError,
    },
    #[error(transparent)]
    Han(#[from] HanError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone)]
struct EncoderParams {
    blocks: Vec<BlockParams>,
    ln: LayerNormParams,
}

/// Model inputs derived from one record.
#[derive(Debug, Clone)]
pub struct PreparedRecord {
    pub id: String,
    /// `[patches, patch_dim]` pixel blocks.
    pub patches: Tensor<f64>,
    pub text_ids: Vec<usize>,
    pub markers: [usize; 6],
    pub slots: SlotPlan,
    /// Caption token ids without BOS/EOS, truncated to fit the decoder.
    pub captions: Vec<Vec<usize>>,
}

/// Tape handles of one record's encoders.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub v_image: Var,
    pub v_text: Var,
    pub v_graph: Option<Var>,
    pub fused: Var,
}

/// Parameter layout of the full captioning model. Values live in a
/// [`ParamStore`]; this struct only holds ids.
#[derive(Debug, Clone)]
pub struct KaleModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub han: Option<HanEncoder>,
    patch: LinearParams,
    vision_pos: ParamId,
    vision: EncoderParams,
    text_embed: ParamId,
    text_pos: ParamId,
    text: EncoderParams,
    graph_proj: Option<LinearParams>,
    modality: ParamId,
    fusion: EncoderParams,
    dec_embed: ParamId,
    dec_pos: ParamId,
    decoder: EncoderParams,
    out: LinearParams,
    cma: Option<LinearParams>,
}

fn stack<T: Scalar>(
    r: &mut Registrar<T>,
    prefix: &str,
    n: usize,
    cfg: &ModelConfig,
    cross: bool,
) -> Result<EncoderParams, ParamError> {
    let blocks = (0..n)
        .map(|i| r.block(&format!("{prefix}.block{i}"), cfg.d_model, cfg.ffn_mult, cross))
        .collect::<Result<_, _>>()?;
    Ok(EncoderParams {
        blocks,
        ln: r.layer_norm(&format!("{prefix}.ln"), cfg.d_model)?,
    })
}

impl KaleModel {
    /// Registers every parameter. Vision-encoder tensors use the vision
    /// learning-rate group, graph-encoder tensors the graph group and the
    /// rest the default group.
    pub fn new<T: Scalar>(
        config: ModelConfig,
        han_config: HanConfig,
        vocab: Vocabulary,
        graph: &HeteroGraph,
        store: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let mut init = Initializer::new(seed);
        let (patch, vision_pos, vision) = {
            let mut r = Registrar {
                store: &mut *store,
                init: &mut init,
                group: LrGroup::Vision,
            };
            let patch = r.linear("vision.patch", config.patch_dim(), d)?;
            let pos = r.init.normal(&[config.num_patches(), d], 0.02);
            let pos = r.tensor("vision.pos".into(), pos)?;
            (patch, pos, stack(&mut r, "vision", config.vision_blocks, &config, false)?)
        };
        let mut r = Registrar {
            store: &mut *store,
            init: &mut init,
            group: LrGroup::Other,
        };
        let t = r.init.normal(&[vocab.len(), d], 0.1);
        let text_embed = r.tensor("text.embed".into(), t)?;
        let t = r.init.normal(&[config.max_text_len(), d], 0.02);
        let text_pos = r.tensor("text.pos".into(), t)?;
        let text = stack(&mut r, "text", config.text_blocks, &config, false)?;
        let graph_proj = if config.use_graph {
            Some(r.linear("fusion.graph_proj", han_config.out_dim(), d)?)
        } else {
            None
        };
        let t = r.init.normal(&[3, d], 0.02);
        let modality = r.tensor("fusion.modality".into(), t)?;
        let fusion = stack(&mut r, "fusion", config.fusion_blocks, &config, false)?;
        let t = r.init.normal(&[vocab.len(), d], 0.1);
        let dec_embed = r.tensor("decoder.embed".into(), t)?;
        let t = r.init.normal(&[config.max_caption_len, d], 0.02);
        let dec_pos = r.tensor("decoder.pos".into(), t)?;
        let decoder = stack(&mut r, "decoder", config.decoder_blocks, &config, true)?;
        let out = if config.zero_output_init {
            LinearParams {
                w: r.tensor("decoder.out.w".into(), Tensor::zeros(&[d, vocab.len()]))?,
                b: r.tensor("decoder.out.b".into(), Tensor::zeros(&[vocab.len()]))?,
            }
        } else {
            r.linear("decoder.out", d, vocab.len())?
        };
        let cma = if config.use_graph {
            Some(r.linear("cma.proj", han_config.out_dim(), d)?)
        } else {
            None
        };
        let han = if config.use_graph {
            Some(HanEncoder::new(graph, han_config, store, &mut init)?)
        } else {
            None
        };
        Ok(Self {
            config,
            vocab,
            han,
            patch,
            vision_pos,
            vision,
            text_embed,
            text_pos,
            text,
            graph_proj,
            modality,
            fusion,
            dec_embed,
            dec_pos,
            decoder,
            out,
            cma,
        })
    }

    pub fn ops(&self) -> Ops {
        Ops {
            heads: self.config.heads,
            eps: self.config.ln_eps,
        }
    }

    /// Parameters of the alignment projection, if the graph branch is on.
    pub fn cma_params(&self) -> Option<LinearParams> {
        self.cma
    }

    /// Decodes the image, serializes metadata and resolves graph slots.
    pub fn prepare(
        &self,
        record: &ArtworkRecord,
        graph: &HeteroGraph,
        providers: &ProviderSet,
    ) -> Result<PreparedRecord, ModelError> {
        let px = load_pixels(&record.image).map_err(|source| ModelError::UndecodableImage {
            id: record.id.clone(),
            source,
        })?;
        let rows = px.patches(self.config.patch_size);
        let patches = Tensor::from_f64(&[rows.len(), self.config.patch_dim()], &rows.concat())?;
        let (text_ids, markers) = self.vocab.serialize_metadata(record, self.config.field_max_tokens);
        let ngram_slots = self.han.as_ref().map_or(0, |h| h.config.ngram_slots);
        let slots = match &self.han {
            Some(_) => plan_slots(graph, providers.text.as_ref(), record, ngram_slots),
            None => SlotPlan { slots: Vec::new() },
        };
        let captions = record
            .captions
            .iter()
            .map(|c| {
                let mut ids = self.vocab.encode(&c.text);
                ids.truncate(self.config.max_caption_len - 1);
                ids
            })
            .collect();
        Ok(PreparedRecord {
            id: record.id.clone(),
            patches,
            text_ids,
            markers,
            slots,
            captions,
        })
    }

    fn run_stack<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        enc: &EncoderParams,
        mut x: Var,
        memory: Option<Var>,
        mask: Option<Rc<[bool]>>,
    ) -> Result<Var, ModelError> {
        let ops = self.ops();
        for b in &enc.blocks {
            x = ops.block(tape, p, b, x, memory, mask.clone())?;
        }
        Ok(ops.layer_norm(tape, p, enc.ln, x)?)
    }

    fn embed_tokens<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        table: ParamId,
        pos: ParamId,
        ids: &[usize],
    ) -> Result<Var, ModelError> {
        let e = tape.gather_rows(p[table], ids.into())?;
        let pe = tape.slice(p[pos], 0, 0, ids.len())?;
        Ok(tape.add(e, pe)?)
    }

    /// `[patches, d_model]` patch embeddings.
    pub fn encode_image<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, patches: Var) -> Result<Var, ModelError> {
        let x = self.ops().linear(tape, p, self.patch, patches)?;
        let x = tape.add(x, p[self.vision_pos])?;
        self.run_stack(tape, p, &self.vision, x, None, None)
    }

    /// `[6, d_model]` hidden states at the marker positions.
    pub fn encode_text<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        ids: &[usize],
        markers: &[usize; 6],
    ) -> Result<Var, ModelError> {
        let x = self.embed_tokens(tape, p, self.text_embed, self.text_pos, ids)?;
        let h = self.run_stack(tape, p, &self.text, x, None, None)?;
        Ok(tape.gather_rows(h, markers.to_vec().into())?)
    }

    /// Self-attention over `[v_image; v_text; proj(v_graph)]` with modality
    /// embeddings added per segment.
    pub fn fuse<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        v_image: Var,
        v_text: Var,
        v_graph: Option<Var>,
    ) -> Result<Var, ModelError> {
        let ops = self.ops();
        let mut parts = vec![v_image, v_text];
        if let (Some(g), Some(proj)) = (v_graph, self.graph_proj) {
            if tape.shape(g)[0] > 0 {
                parts.push(ops.linear(tape, p, proj, g)?);
            }
        }
        let mut seq = Vec::with_capacity(parts.len());
        for (m, part) in parts.into_iter().enumerate() {
            let row = tape.slice(p[self.modality], 0, m, 1)?;
            seq.push(tape.add_row(part, row)?);
        }
        let x = tape.concat(&seq, 0)?;
        self.run_stack(tape, p, &self.fusion, x, None, None)
    }

    /// Teacher-forced `[prefix_len, vocab]` logits under a causal mask.
    pub fn decode_logits<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        fused: Var,
        prefix: &[usize],
    ) -> Result<Var, ModelError> {
        if prefix.is_empty() || prefix.len() > self.config.max_caption_len {
            return Err(ModelError::PrefixTooLong {
                len: prefix.len(),
                max: self.config.max_caption_len,
            });
        }
        let x = self.embed_tokens(tape, p, self.dec_embed, self.dec_pos, prefix)?;
        let h = self.run_stack(tape, p, &self.decoder, x, Some(fused), Some(causal_mask(prefix.len())))?;
        Ok(self.ops().linear(tape, p, self.out, h)?)
    }

    /// Runs the image, text and graph encoders and the fusion encoder.
    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        han: Option<&HanForward>,
        rec: &PreparedRecord,
    ) -> Result<Encoded, ModelError> {
        let patches = tape.constant(Tensor::from_f64(rec.patches.shape(), rec.patches.data())?);
        let v_image = self.encode_image(tape, p, patches)?;
        let v_text = self.encode_text(tape, p, &rec.text_ids, &rec.markers)?;
        let v_graph = match (&self.han, han) {
            (Some(enc), Some(out)) => Some(enc.slot_matrix(tape, p, out.v_all, &rec.slots)?),
            _ => None,
        };
        let fused = self.fuse(tape, p, v_image, v_text, v_graph)?;
        Ok(Encoded {
            v_image,
            v_text,
            v_graph,
            fused,
        })
    }

    /// Ids never emitted during generation.
    pub fn banned_tokens() -> Vec<usize> {
        let mut b = vec![PAD, BOS];
        b.extend(MARKERS);
        b
    }

    /// Runs the encoders once with frozen parameters and returns a step
    /// function mapping a decoder prefix to next-token log-probabilities.
    fn session<'s, T: Scalar>(
        &'s self,
        store: &ParamStore<T>,
        rec: &PreparedRecord,
    ) -> Result<impl FnMut(&[usize]) -> Result<Vec<f64>, ModelError> + 's, ModelError> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let han = match &self.han {
            Some(h) => Some(h.forward(&mut tape, &p)?),
            None => None,
        };
        let enc = self.encode(&mut tape, &p, han.as_ref(), rec)?;
        let fused = tape.value(enc.fused).clone();
        Ok(move |prefix: &[usize]| {
            let f = tape.constant(fused.clone());
            let logits = self.decode_logits(&mut tape, &p, f, prefix)?;
            let last = tape.slice(logits, 0, prefix.len() - 1, 1)?;
            let lp = tape.log_softmax(last);
            Ok(tape.value(lp).to_f64_vec())
        })
    }

    /// Beam search with frozen parameters; `max_len` is capped by the
    /// decoder's position count.
    pub fn generate<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        rec: &PreparedRecord,
        beam: BeamConfig,
    ) -> Result<Vec<Hypothesis>, ModelError> {
        let cfg = BeamConfig {
            max_len: beam.max_len.min(self.config.max_caption_len - 1),
            ..beam
        };
        beam_search(BOS, EOS, cfg, &Self::banned_tokens(), self.session(store, rec)?)
    }

    /// Argmax decoding with frozen parameters.
    pub fn greedy_caption<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        rec: &PreparedRecord,
        beam: BeamConfig,
    ) -> Result<Hypothesis, ModelError> {
        let max_len = beam.max_len.min(self.config.max_caption_len - 1);
        greedy(BOS, EOS, max_len, beam.length_penalty, &Self::banned_tokens(), self.session(store, rec)?)
    }
}
