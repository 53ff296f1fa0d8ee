//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "ICMILCK\0"
//! version    u32
//! kind       u8       0 mean, 1 max, 2 gated attention
//! activation u8       0 tanh, 1 sigmoid
//! n_dims     u32, then n_dims × u64 embedder widths (input first)
//! attn_dim   u64      0 unless gated attention
//! classes    u64
//! n_params   u32, then per param: rows u64, cols u64, rows×cols f64
//! ```
//!
//! Parameters follow `MilModel::params` order. Values are stored as raw bit
//! patterns, so a round trip is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gradcore::{Activation, Linear, Param, Tensor2};
use crate::milnet::{Aggregator, AggregatorKind, BagClassifier, Embedder, GatedAttention, MilModel};

pub const MAGIC: [u8; 8] = *b"ICMILCK\0";
pub const VERSION: u32 = 1;

fn kind_code(kind: AggregatorKind) -> u8 {
    match kind {
        AggregatorKind::Mean => 0,
        AggregatorKind::Max => 1,
        AggregatorKind::GatedAttention => 2,
    }
}

fn attention_dim(model: &MilModel) -> usize {
    match &model.aggregator {
        Aggregator::GatedAttention(att) => att.inner_dim(),
        _ => 0,
    }
}

pub fn encode_checkpoint(model: &MilModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind_code(model.aggregator.kind()));
    buf.push(match model.embedder.activation {
        Activation::Tanh => 0,
        Activation::Sigmoid => 1,
    });
    let dims = model.embedder.dims();
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    buf.extend_from_slice(&(attention_dim(model) as u64).to_le_bytes());
    buf.extend_from_slice(&(model.classifier.num_classes() as u64).to_le_bytes());
    let params = model.params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let (r, c) = p.shape();
        buf.extend_from_slice(&(r as u64).to_le_bytes());
        buf.extend_from_slice(&(c as u64).to_le_bytes());
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} too large")))
    }
}

fn zeros(rows: usize, cols: usize) -> Param {
    Param::new(Tensor2::zeros(rows, cols))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MilModel> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes, not a checkpoint".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads {VERSION})"
        )));
    }
    let kind = match cur.u8("aggregator kind")? {
        0 => AggregatorKind::Mean,
        1 => AggregatorKind::Max,
        2 => AggregatorKind::GatedAttention,
        k => return Err(Error::Checkpoint(format!("unknown aggregator code {k}"))),
    };
    let activation = match cur.u8("activation")? {
        0 => Activation::Tanh,
        1 => Activation::Sigmoid,
        a => return Err(Error::Checkpoint(format!("unknown activation code {a}"))),
    };
    let n_dims = cur.u32("dimension count")? as usize;
    if n_dims < 2 {
        return Err(Error::Checkpoint("embedder needs at least two widths".into()));
    }
    let dims = (0..n_dims)
        .map(|_| cur.u64("embedder width"))
        .collect::<Result<Vec<_>>>()?;
    let attn_dim = cur.u64("attention width")?;
    let classes = cur.u64("class count")?;
    let rep_dim = *dims.last().expect("checked above");

    let mut model = MilModel {
        embedder: Embedder {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
            activation,
        },
        aggregator: match kind {
            AggregatorKind::Mean => Aggregator::Mean,
            AggregatorKind::Max => Aggregator::Max,
            AggregatorKind::GatedAttention => Aggregator::GatedAttention(GatedAttention {
                v1: zeros(rep_dim, attn_dim),
                v2: zeros(rep_dim, attn_dim),
                omega: zeros(attn_dim, 1),
            }),
        },
        classifier: BagClassifier {
            linear: Linear::zeros(rep_dim, classes),
        },
    };

    let n_params = cur.u32("parameter count")? as usize;
    let mut params = model.params_mut();
    if n_params != params.len() {
        return Err(Error::Checkpoint(format!(
            "header implies {} parameter blocks, file has {n_params}",
            params.len()
        )));
    }
    for (i, p) in params.iter_mut().enumerate() {
        let shape = (cur.u64("rows")?, cur.u64("cols")?);
        if shape != p.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {i} is {shape:?}, header implies {:?}",
                p.shape()
            )));
        }
        for v in p.value.data_mut() {
            *v = f64::from_le_bytes(cur.take(8, "parameter value")?.try_into().expect("8 bytes"));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last parameter",
            bytes.len() - cur.pos
        )));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &MilModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&encode_checkpoint(model))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MilModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
