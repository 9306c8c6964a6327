use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{GraphError, HeteroGraph, MetaPath, NodeRef, NodeTable, NodeType};

pub const MAGIC: &[u8; 8] = b"KALEHG01";

const SEC_NODES: u8 = 1;
const SEC_EDGES: u8 = 2;
const SEC_METAPATHS: u8 = 3;
const SEC_PROVIDER: u8 = 4;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], GraphError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| GraphError::Malformed(format!("need {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, GraphError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, GraphError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, GraphError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, GraphError> {
        usize::try_from(self.u64()?).map_err(|_| GraphError::Malformed("length overflow".into()))
    }

    fn f64(&mut self) -> Result<f64, GraphError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, GraphError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| GraphError::Malformed("invalid utf-8".into()))
    }

    fn node_type(&mut self) -> Result<NodeType, GraphError> {
        let t = self.u8()?;
        NodeType::from_tag(t).ok_or_else(|| GraphError::Malformed(format!("unknown node type tag {t}")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn encode_nodes(g: &HeteroGraph) -> Vec<u8> {
    let mut b = Vec::new();
    put_u32(&mut b, 8);
    for ty in NodeType::ALL {
        let t = g.table(ty);
        b.push(ty.tag());
        put_u64(&mut b, t.len() as u64);
        put_u32(&mut b, t.dim as u32);
        for (label, emb) in t.labels.iter().zip(&t.embeddings) {
            put_str(&mut b, label);
            for x in emb {
                b.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    b
}

fn encode_edges(g: &HeteroGraph) -> Vec<u8> {
    let mut b = Vec::new();
    put_u64(&mut b, g.edges().len() as u64);
    for e in g.edges() {
        for n in [e.a, e.b] {
            b.push(n.ty.tag());
            put_u64(&mut b, n.index as u64);
        }
    }
    b
}

fn encode_metapaths(g: &HeteroGraph) -> Vec<u8> {
    let mut b = Vec::new();
    put_u32(&mut b, g.metapaths().len() as u32);
    for p in g.metapaths() {
        put_str(&mut b, &p.name);
        put_u32(&mut b, p.types.len() as u32);
        b.extend(p.types.iter().map(|t| t.tag()));
    }
    b
}

fn encode_provider(g: &HeteroGraph) -> Vec<u8> {
    let mut b = Vec::new();
    put_str(&mut b, g.provider_descriptor());
    b.extend_from_slice(&Sha256::digest(g.provider_descriptor().as_bytes()));
    b
}

/// Binary container: magic, section count, then per section
/// `tag:u8, len:u64, payload, crc32(payload):u32`. Floats are little-endian f64.
pub fn write_graph_bytes(g: &HeteroGraph) -> Vec<u8> {
    let sections = [
        (SEC_NODES, encode_nodes(g)),
        (SEC_EDGES, encode_edges(g)),
        (SEC_METAPATHS, encode_metapaths(g)),
        (SEC_PROVIDER, encode_provider(g)),
    ];
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, sections.len() as u32);
    for (tag, payload) in sections {
        out.push(tag);
        put_u64(&mut out, payload.len() as u64);
        out.extend_from_slice(&payload);
        put_u32(&mut out, crc32fast::hash(&payload));
    }
    out
}

fn decode_nodes(r: &mut Reader) -> Result<[NodeTable; 8], GraphError> {
    let mut tables: [NodeTable; 8] = Default::default();
    let n = r.u32()?;
    if n != 8 {
        return Err(GraphError::Malformed(format!("{n} node tables")));
    }
    for _ in 0..8 {
        let ty = r.node_type()?;
        let count = r.len()?;
        let dim = r.u32()? as usize;
        let t = &mut tables[ty as usize];
        t.dim = dim;
        for _ in 0..count {
            t.labels.push(r.string()?);
            t.embeddings.push((0..dim).map(|_| r.f64()).collect::<Result<_, _>>()?);
        }
    }
    Ok(tables)
}

/// Parses bytes produced by [`write_graph_bytes`], verifying every checksum.
pub fn read_graph_bytes(bytes: &[u8]) -> Result<HeteroGraph, GraphError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(GraphError::SchemaVersionMismatch);
    }
    let mut r = Reader::new(&bytes[MAGIC.len()..]);
    let count = r.u32()?;
    let mut tables = None;
    let mut edges = Vec::new();
    let mut metapaths = Vec::new();
    let mut provider = String::new();
    for _ in 0..count {
        let tag = r.u8()?;
        let len = r.len()?;
        let payload = r.take(len)?;
        if r.u32()? != crc32fast::hash(payload) {
            return Err(GraphError::Checksum(tag));
        }
        let mut p = Reader::new(payload);
        match tag {
            SEC_NODES => tables = Some(decode_nodes(&mut p)?),
            SEC_EDGES => {
                let n = p.len()?;
                for _ in 0..n {
                    let a = NodeRef::new(p.node_type()?, p.len()?);
                    let b = NodeRef::new(p.node_type()?, p.len()?);
                    edges.push((a, b));
                }
            }
            SEC_METAPATHS => {
                let n = p.u32()?;
                for _ in 0..n {
                    let name = p.string()?;
                    let len = p.u32()?;
                    let types = (0..len).map(|_| p.node_type()).collect::<Result<Vec<_>, _>>()?;
                    let mp = MetaPath::new(types)?;
                    if mp.name != name {
                        return Err(GraphError::Malformed(format!("meta-path name `{name}`")));
                    }
                    metapaths.push(mp);
                }
            }
            SEC_PROVIDER => {
                provider = p.string()?;
                let digest = p.take(32)?;
                if digest != Sha256::digest(provider.as_bytes()).as_slice() {
                    return Err(GraphError::Malformed("provider digest mismatch".into()));
                }
            }
            other => return Err(GraphError::Malformed(format!("unknown section {other}"))),
        }
        if !p.done() {
            return Err(GraphError::Malformed(format!("trailing bytes in section {tag}")));
        }
    }
    let tables = tables.ok_or_else(|| GraphError::Malformed("missing node section".into()))?;
    for (a, b) in &edges {
        for n in [a, b] {
            if n.index >= tables[n.ty as usize].len() {
                return Err(GraphError::Malformed(format!("edge endpoint {n:?} out of range")));
            }
        }
    }
    Ok(HeteroGraph::from_parts(tables, edges, metapaths, provider))
}

/// Writes atomically via a temporary sibling file.
pub fn serialize_graph(g: &HeteroGraph, path: &Path) -> Result<(), GraphError> {
    let io = |source| GraphError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, write_graph_bytes(g)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_graph(path: &Path) -> Result<HeteroGraph, GraphError> {
    let bytes = fs::read(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_graph_bytes(&bytes)
}

/// JSON mirror of the binary content, for inspection.
pub fn export_json(g: &HeteroGraph) -> Value {
    let nodes: serde_json::Map<String, Value> = NodeType::ALL
        .iter()
        .map(|ty| {
            let t = g.table(*ty);
            let rows: Vec<Value> = t
                .labels
                .iter()
                .zip(&t.embeddings)
                .enumerate()
                .map(|(i, (l, e))| json!({"index": i, "label": l, "embedding": e}))
                .collect();
            (ty.name().to_string(), json!({"dim": t.dim, "rows": rows}))
        })
        .collect();
    let edges: Vec<Value> = g
        .edges()
        .iter()
        .map(|e| json!([e.a.ty.name(), e.a.index, e.b.ty.name(), e.b.index, e.relation()]))
        .collect();
    let paths: Vec<Value> = g
        .metapaths()
        .iter()
        .map(|p| json!({"name": p.name, "types": p.types.iter().map(|t| t.name()).collect::<Vec<_>>()}))
        .collect();
    json!({
        "format": String::from_utf8_lossy(MAGIC),
        "nodes": nodes,
        "edges": edges,
        "metapaths": paths,
        "provider": g.provider_descriptor(),
    })
}
