//! Binary checkpoint: run configuration, vocabulary, parameters, optimizer
//! moments, counters and the graph the model was trained on.
//!
//! Layout: magic `KALECK01`, u32 version, sha256 of the configuration text,
//! then length-prefixed fields, all little-endian, followed by a crc32 of
//! everything before it.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::numeric::{LrGroup, ParamStore, Scalar, Tensor};

use super::adamw::AdamW;
use super::TrainError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KALECK01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub group: LrGroup,
    pub tensor: Tensor<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Effective run configuration as TOML.
    pub config_text: String,
    pub step: u64,
    pub epoch: u64,
    pub vocab: Vec<String>,
    pub params: Vec<ParamRecord>,
    /// Adam first/second moments in parameter order, with the step counter.
    pub moments: Option<(Vec<Tensor<f64>>, Vec<Tensor<f64>>, u64)>,
    /// Serialized graph.
    pub graph: Vec<u8>,
}

pub fn config_digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn to_f64<T: Scalar>(t: &Tensor<T>) -> Tensor<f64> {
    Tensor::new(t.shape().to_vec(), t.to_f64_vec()).expect("same shape")
}

fn from_f64<T: Scalar>(t: &Tensor<f64>) -> Tensor<T> {
    Tensor::from_f64(t.shape(), t.data()).expect("same shape")
}

impl Checkpoint {
    pub fn capture<T: Scalar>(
        config_text: String,
        step: u64,
        epoch: u64,
        vocab: Vec<String>,
        store: &ParamStore<T>,
        opt: Option<&AdamW<T>>,
        graph: Vec<u8>,
    ) -> Self {
        let params = store
            .iter()
            .map(|(_, p)| ParamRecord {
                name: p.name.clone(),
                group: p.lr_group,
                tensor: to_f64(&p.tensor),
            })
            .collect();
        let moments = opt.map(|o| (o.m.iter().map(to_f64).collect(), o.v.iter().map(to_f64).collect(), o.t));
        Self {
            config_text,
            step,
            epoch,
            vocab,
            params,
            moments,
            graph,
        }
    }

    /// Copies parameter values into `store`, which must hold the same
    /// names, groups and shapes in the same order.
    pub fn restore_params<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<(), TrainError> {
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        if ids.len() != self.params.len() {
            return Err(TrainError::CheckpointMismatch(format!(
                "{} parameters in checkpoint, {} in model",
                self.params.len(),
                ids.len()
            )));
        }
        for (id, rec) in ids.into_iter().zip(&self.params) {
            let p = store.get_mut(id);
            if p.name != rec.name || p.lr_group != rec.group || p.tensor.shape() != rec.tensor.shape() {
                return Err(TrainError::CheckpointMismatch(format!("parameter `{}` differs", rec.name)));
            }
            p.tensor = from_f64(&rec.tensor);
        }
        Ok(())
    }

    pub fn restore_optimizer<T: Scalar>(&self, opt: &mut AdamW<T>) -> Result<(), TrainError> {
        let Some((m, v, t)) = &self.moments else {
            return Err(TrainError::CheckpointMismatch("checkpoint has no optimizer state".into()));
        };
        if m.len() != opt.m.len() || m.iter().zip(&opt.m).any(|(a, b)| a.shape() != b.shape()) {
            return Err(TrainError::CheckpointMismatch("optimizer moments differ in shape".into()));
        }
        opt.m = m.iter().map(from_f64).collect();
        opt.v = v.iter().map(from_f64).collect();
        opt.t = *t;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.0.extend_from_slice(&config_digest(&self.config_text));
        w.bytes(self.config_text.as_bytes());
        w.u64(self.step);
        w.u64(self.epoch);
        w.u64(self.vocab.len() as u64);
        for t in &self.vocab {
            w.bytes(t.as_bytes());
        }
        w.u64(self.params.len() as u64);
        for p in &self.params {
            w.bytes(p.name.as_bytes());
            w.0.push(p.group.tag());
            w.tensor(&p.tensor);
        }
        match &self.moments {
            Some((m, v, t)) => {
                w.0.push(1);
                w.u64(*t);
                for x in m.iter().chain(v) {
                    w.tensor(x);
                }
            }
            None => w.0.push(0),
        }
        w.bytes(&self.graph);
        let crc = crc32fast::hash(&w.0);
        w.u32(crc);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(TrainError::BadCheckpoint("missing KALECK01 magic".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(TrainError::BadCheckpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::BadCheckpoint(format!("unsupported version {version}")));
        }
        let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let config_text = r.string()?;
        if config_digest(&config_text) != digest {
            return Err(TrainError::BadCheckpoint("configuration digest mismatch".into()));
        }
        let step = r.u64()?;
        let epoch = r.u64()?;
        let n = r.u64()?;
        let vocab = (0..n).map(|_| r.string()).collect::<Result<_, _>>()?;
        let n = r.u64()? as usize;
        let mut params = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.string()?;
            let tag = r.take(1)?[0];
            let group = LrGroup::from_tag(tag).ok_or_else(|| TrainError::BadCheckpoint(format!("bad group tag {tag}")))?;
            params.push(ParamRecord {
                name,
                group,
                tensor: r.tensor()?,
            });
        }
        let moments = match r.take(1)?[0] {
            0 => None,
            1 => {
                let t = r.u64()?;
                let m = (0..n).map(|_| r.tensor()).collect::<Result<_, _>>()?;
                let v = (0..n).map(|_| r.tensor()).collect::<Result<_, _>>()?;
                Some((m, v, t))
            }
            f => return Err(TrainError::BadCheckpoint(format!("bad moments flag {f}"))),
        };
        let graph = r.bytes()?.to_vec();
        if r.pos != body.len() {
            return Err(TrainError::BadCheckpoint("trailing bytes".into()));
        }
        Ok(Self {
            config_text,
            step,
            epoch,
            vocab,
            params,
            moments,
            graph,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let tmp = path.with_extension("tmp");
        let io = |source| TrainError::Io {
            path: path.display().to_string(),
            source,
        };
        fs::write(&tmp, self.to_bytes()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = fs::read(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }

    fn tensor(&mut self, t: &Tensor<f64>) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for x in t.data() {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| TrainError::BadCheckpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8], TrainError> {
        let n = self.u64()?;
        self.take(usize::try_from(n).map_err(|_| TrainError::BadCheckpoint("length overflow".into()))?)
    }

    fn string(&mut self) -> Result<String, TrainError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| TrainError::BadCheckpoint("invalid UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor<f64>, TrainError> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(TrainError::BadCheckpoint(format!("tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| TrainError::BadCheckpoint("tensor size overflow".into()))?;
        let raw = self.take(len.checked_mul(8).ok_or_else(|| TrainError::BadCheckpoint("tensor size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Tensor::new(shape, data).map_err(|e| TrainError::BadCheckpoint(e.to_string()))
    }
}
