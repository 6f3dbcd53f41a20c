//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        b"SLRA"
//! version      u32
//! stage_id     u8
//! labels       u32 count, then per label: u32 byte length + UTF-8
//! rng          32-byte ChaCha seed + u128 word position
//! history      u32 count, then per stage: stage_id u8, rank u32, epochs u32, lr f64
//! tensors      u32 count, then per tensor:
//!                u32 name length + UTF-8 name, rows u64, cols u64,
//!                rows*cols f64 values in row-major order
//! ```
//!
//! Tensor names are `backbone.<i>.{weight,bias,lora_a,lora_b,lora_scale}`
//! and `head.{weight,bias}`. Nothing may follow the last tensor.

use std::path::Path;

use crate::autodiff::Matrix;
use crate::error::{CheckpointError, Error, Result};
use crate::lora::{AdaptedLinear, LoraAdapter};
use crate::model::ClassifierNet;
use crate::train::RngState;

pub const MAGIC: [u8; 4] = *b"SLRA";
pub const VERSION: u32 = 1;

/// One completed (or transitioned-into) stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSummary {
    pub stage_id: u8,
    pub rank: u32,
    pub epochs: u32,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage_id: u8,
    pub net: ClassifierNet,
    pub rng: RngState,
    pub history: Vec<StageSummary>,
}

impl Checkpoint {
    pub fn labels(&self) -> &[String] {
        self.net.labels()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.stage_id);
        put_u32(&mut out, self.net.labels().len());
        for l in self.net.labels() {
            put_str(&mut out, l);
        }
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        put_u32(&mut out, self.history.len());
        for h in &self.history {
            out.push(h.stage_id);
            out.extend_from_slice(&h.rank.to_le_bytes());
            out.extend_from_slice(&h.epochs.to_le_bytes());
            out.extend_from_slice(&h.learning_rate.to_le_bytes());
        }
        let tensors = named_tensors(&self.net);
        put_u32(&mut out, tensors.len());
        for (name, m) in &tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let stage_id = r.u8("stage id")?;
        let n_labels = r.u32("label count")?;
        let mut labels = Vec::new();
        for _ in 0..n_labels {
            labels.push(r.string("label")?);
        }
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
        let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
        let n_hist = r.u32("history count")?;
        let mut history = Vec::new();
        for _ in 0..n_hist {
            history.push(StageSummary {
                stage_id: r.u8("history")?,
                rank: r.u32("history")?,
                epochs: r.u32("history")?,
                learning_rate: r.f64("history")?,
            });
        }
        let n_tensors = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let name = r.string("tensor name")?;
            let rows = r.u64("tensor rows")?;
            let cols = r.u64("tensor cols")?;
            let count = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .and_then(|n| usize::try_from(n).ok())
                .ok_or_else(|| CheckpointError::Shape {
                    name: name.clone(),
                    rows,
                    cols,
                    detail: "an addressable size".into(),
                })?;
            let raw = r.take(count, "tensor data")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Matrix::from_vec(rows as usize, cols as usize, data).expect("length checked");
            if tensors.iter().any(|(n, _)| *n == name) {
                return Err(CheckpointError::Malformed(format!("duplicate tensor {name}")));
            }
            tensors.push((name, m));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        let net = assemble(tensors, labels)?;
        Ok(Checkpoint {
            stage_id,
            net,
            rng: RngState { seed, word_pos },
            history,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

fn named_tensors(net: &ClassifierNet) -> Vec<(String, Matrix)> {
    let mut out = Vec::new();
    for (i, layer) in net.backbone().iter().enumerate() {
        out.push((format!("backbone.{i}.weight"), layer.weight.clone()));
        out.push((format!("backbone.{i}.bias"), layer.bias.clone()));
        if let Some(ad) = &layer.adapter {
            out.push((format!("backbone.{i}.lora_a"), ad.a.clone()));
            out.push((format!("backbone.{i}.lora_b"), ad.b.clone()));
            out.push((format!("backbone.{i}.lora_scale"), Matrix::filled(1, 1, ad.scale)));
        }
    }
    out.push(("head.weight".into(), net.head().weight.clone()));
    out.push(("head.bias".into(), net.head().bias.clone()));
    out
}

fn assemble(mut tensors: Vec<(String, Matrix)>, labels: Vec<String>) -> Result<ClassifierNet, CheckpointError> {
    let mut take = |name: &str| -> Option<Matrix> {
        let idx = tensors.iter().position(|(n, _)| n == name)?;
        Some(tensors.remove(idx).1)
    };
    let missing = |name: &str| CheckpointError::Malformed(format!("missing tensor {name}"));
    let shape_err = |name: &str, m: &Matrix, detail: String| CheckpointError::Shape {
        name: name.to_string(),
        rows: m.rows() as u64,
        cols: m.cols() as u64,
        detail,
    };

    let mut backbone = Vec::new();
    for i in 0.. {
        let wname = format!("backbone.{i}.weight");
        let Some(weight) = take(&wname) else { break };
        let bname = format!("backbone.{i}.bias");
        let bias = take(&bname).ok_or_else(|| missing(&bname))?;
        if bias.shape() != (weight.rows(), 1) {
            return Err(shape_err(&bname, &bias, format!("weight {:?}", weight.shape())));
        }
        let mut layer = AdaptedLinear::new(weight, bias).expect("bias shape checked");
        let (a, b, s) = (
            take(&format!("backbone.{i}.lora_a")),
            take(&format!("backbone.{i}.lora_b")),
            take(&format!("backbone.{i}.lora_scale")),
        );
        match (a, b, s) {
            (None, None, None) => {}
            (Some(a), Some(b), Some(s)) => {
                let aname = format!("backbone.{i}.lora_a");
                if s.shape() != (1, 1) {
                    return Err(shape_err(&format!("backbone.{i}.lora_scale"), &s, "a 1x1 scale".into()));
                }
                let adapter = LoraAdapter::from_parts(a.clone(), b, s.get(0, 0))
                    .map_err(|e| shape_err(&aname, &a, e.to_string()))?;
                layer
                    .attach(adapter)
                    .map_err(|e| shape_err(&aname, &a, e.to_string()))?;
            }
            _ => {
                return Err(CheckpointError::Malformed(format!(
                    "layer {i} has an incomplete adapter"
                )))
            }
        }
        backbone.push(layer);
    }
    if backbone.is_empty() {
        return Err(missing("backbone.0.weight"));
    }
    let head_w = take("head.weight").ok_or_else(|| missing("head.weight"))?;
    let head_b = take("head.bias").ok_or_else(|| missing("head.bias"))?;
    if head_w.rows() != labels.len() {
        return Err(shape_err("head.weight", &head_w, format!("{} labels", labels.len())));
    }
    if let Some((name, _)) = tensors.first() {
        return Err(CheckpointError::Malformed(format!("unexpected tensor {name}")));
    }
    let head =
        AdaptedLinear::new(head_w.clone(), head_b).map_err(|e| shape_err("head.bias", &head_w, e.to_string()))?;
    ClassifierNet::from_parts(backbone, head, labels).map_err(|e| shape_err("head.weight", &head_w, e.to_string()))
}

fn put_u32(out: &mut Vec<u8>, n: usize) {
    let n = u32::try_from(n).expect("count fits in u32");
    out.extend_from_slice(&n.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CheckpointError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &'static str) -> Result<String, CheckpointError> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CheckpointError::Malformed(format!("{what} is not UTF-8")))
    }
}
