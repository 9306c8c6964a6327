use std::rc::Rc;

use crate::numeric::{BoundParams, Initializer, LrGroup, NumericError, ParamError, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub q: LinearParams,
    pub k: LinearParams,
    pub v: LinearParams,
    pub o: LinearParams,
}

/// Pre-LN transformer block, optionally with cross-attention.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub cross: Option<(LayerNormParams, AttentionParams)>,
    pub ln2: LayerNormParams,
    pub ff1: LinearParams,
    pub ff2: LinearParams,
}

/// Registers parameters under a common prefix and learning-rate group.
pub struct Registrar<'a, T: Scalar> {
    pub store: &'a mut ParamStore<T>,
    pub init: &'a mut Initializer,
    pub group: LrGroup,
}

impl<T: Scalar> Registrar<'_, T> {
    pub fn tensor(&mut self, name: String, t: Tensor<T>) -> Result<ParamId, ParamError> {
        self.store.register(name, t, self.group)
    }

    pub fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Result<LinearParams, ParamError> {
        let w = self.init.matrix(fan_in, fan_out, 1.0);
        Ok(LinearParams {
            w: self.tensor(format!("{prefix}.w"), w)?,
            b: self.tensor(format!("{prefix}.b"), Tensor::zeros(&[fan_out]))?,
        })
    }

    pub fn layer_norm(&mut self, prefix: &str, d: usize) -> Result<LayerNormParams, ParamError> {
        Ok(LayerNormParams {
            gamma: self.tensor(format!("{prefix}.gamma"), Tensor::filled(&[d], T::one()))?,
            beta: self.tensor(format!("{prefix}.beta"), Tensor::zeros(&[d]))?,
        })
    }

    pub fn attention(&mut self, prefix: &str, d: usize) -> Result<AttentionParams, ParamError> {
        Ok(AttentionParams {
            q: self.linear(&format!("{prefix}.q"), d, d)?,
            k: self.linear(&format!("{prefix}.k"), d, d)?,
            v: self.linear(&format!("{prefix}.v"), d, d)?,
            o: self.linear(&format!("{prefix}.o"), d, d)?,
        })
    }

    pub fn block(&mut self, prefix: &str, d: usize, ffn_mult: usize, cross: bool) -> Result<BlockParams, ParamError> {
        Ok(BlockParams {
            ln1: self.layer_norm(&format!("{prefix}.ln1"), d)?,
            attn: self.attention(&format!("{prefix}.attn"), d)?,
            cross: if cross {
                Some((
                    self.layer_norm(&format!("{prefix}.ln_cross"), d)?,
                    self.attention(&format!("{prefix}.cross"), d)?,
                ))
            } else {
                None
            },
            ln2: self.layer_norm(&format!("{prefix}.ln2"), d)?,
            ff1: self.linear(&format!("{prefix}.ff1"), d, d * ffn_mult)?,
            ff2: self.linear(&format!("{prefix}.ff2"), d * ffn_mult, d)?,
        })
    }
}

/// Shared forward helpers; `eps` is the layer-norm epsilon.
#[derive(Debug, Clone, Copy)]
pub struct Ops {
    pub heads: usize,
    pub eps: f64,
}

/// `mask[i * n + j] = j <= i`.
pub fn causal_mask(n: usize) -> Rc<[bool]> {
    (0..n * n).map(|k| k % n <= k / n).collect()
}

impl Ops {
    pub fn linear<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, l: LinearParams, x: Var) -> Result<Var, NumericError> {
        tape.linear(x, p[l.w], p[l.b])
    }

    pub fn layer_norm<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, l: LayerNormParams, x: Var) -> Result<Var, NumericError> {
        tape.layer_norm(x, p[l.gamma], p[l.beta], T::lit(self.eps))
    }

    /// Multi-head scaled dot-product attention of `xq` over `xkv`.
    pub fn attention<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        a: AttentionParams,
        xq: Var,
        xkv: Var,
        mask: Option<Rc<[bool]>>,
    ) -> Result<Var, NumericError> {
        let q = self.linear(tape, p, a.q, xq)?;
        let k = self.linear(tape, p, a.k, xkv)?;
        let v = self.linear(tape, p, a.v, xkv)?;
        let d = tape.shape(q)[1];
        let dh = d / self.heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice(q, 1, h * dh, dh)?;
            let kh = tape.slice(k, 1, h * dh, dh)?;
            let vh = tape.slice(v, 1, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, scale);
            let att = match &mask {
                Some(m) => tape.masked_softmax(s, m.clone())?,
                None => tape.softmax(s, 1)?,
            };
            outs.push(tape.matmul(att, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 1)? };
        self.linear(tape, p, a.o, cat)
    }

    pub fn block<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        b: &BlockParams,
        x: Var,
        memory: Option<Var>,
        mask: Option<Rc<[bool]>>,
    ) -> Result<Var, NumericError> {
        let h = self.layer_norm(tape, p, b.ln1, x)?;
        let h = self.attention(tape, p, b.attn, h, h, mask)?;
        let mut x = tape.add(x, h)?;
        if let (Some((ln, att)), Some(mem)) = (b.cross, memory) {
            let h = self.layer_norm(tape, p, ln, x)?;
            let h = self.attention(tape, p, att, h, mem, None)?;
            x = tape.add(x, h)?;
        }
        let h = self.layer_norm(tape, p, b.ln2, x)?;
        let h = self.linear(tape, p, b.ff1, h)?;
        let h = tape.gelu(h);
        let h = self.linear(tape, p, b.ff2, h)?;
        tape.add(x, h)
    }
}
