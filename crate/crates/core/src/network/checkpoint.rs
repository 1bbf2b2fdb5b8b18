//! Single-file checkpoints: magic, a JSON manifest, then named tensors with
//! shape headers and little-endian f64 payloads.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GcnParams, ImageHeadParams, ModelKind, ModelParams};
use crate::error::{Error, Result};
use crate::feasibility::Mixing;
use crate::graph::EdgeSwitches;
use crate::trainer::TrainMode;

const MAGIC: &[u8; 8] = b"COCGECKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: ModelKind,
    pub mode: TrainMode,
    pub gcn_dims: Vec<usize>,
    pub head_dims: Vec<usize>,
    pub dropout: f64,
    pub temperature: f64,
    pub switches: EdgeSwitches,
    pub mixing: Mixing,
    pub seed: u64,
    /// Epoch the parameters were taken from.
    pub epoch: usize,
    pub init: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: ModelParams,
    /// `|S| × |O|` feasibility the graph was weighted with, if any.
    pub feasibility: Option<Array2<f64>>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: ndarray::ArrayViewD<'_, f64>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.ndim() as u32);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for &x in t.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let manifest = serde_json::to_vec(&ckpt.manifest)?;
    put_u64(&mut out, manifest.len() as u64);
    out.extend_from_slice(&manifest);

    let mut tensors = ckpt.params.tensors();
    if let Some(f) = &ckpt.feasibility {
        tensors.push(("feasibility".into(), f.view().into_dyn()));
    }
    put_u32(&mut out, tensors.len() as u32);
    for (name, t) in tensors {
        put_tensor(&mut out, &name, t);
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Validation("checkpoint truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, ArrayD<f64>)> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Validation("tensor name is not UTF-8".into()))?;
        let ndim = self.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = self
            .take(len * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| Error::Validation(format!("tensor '{name}': {e}")))?;
        Ok((name, arr))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Validation(format!("{} is not a checkpoint", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Validation(format!("unsupported checkpoint version {version}")));
    }
    let mlen = r.u64()? as usize;
    let manifest: CheckpointManifest = serde_json::from_slice(r.take(mlen)?)?;

    // Build a correctly-shaped skeleton, then overwrite every tensor.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let gcn = if manifest.gcn_dims.len() >= 2 {
        GcnParams::init(&manifest.gcn_dims, &mut rng)
    } else {
        GcnParams { weights: vec![] }
    };
    let head = ImageHeadParams::init(&manifest.head_dims, manifest.dropout, &mut rng);
    let mut params = ModelParams {
        kind: manifest.kind,
        gcn,
        head,
        classifiers: None,
    };

    let count = r.u32()? as usize;
    let mut loaded = Vec::with_capacity(count);
    for _ in 0..count {
        loaded.push(r.tensor()?);
    }
    let mut feasibility = None;
    let mut classifiers: (Option<Array2<f64>>, Option<Array2<f64>>) = (None, None);
    loaded.retain(|(name, t)| {
        let as2 = || t.clone().into_dimensionality::<ndarray::Ix2>().ok();
        match name.as_str() {
            "feasibility" => feasibility = as2(),
            "classifier.states" => classifiers.0 = as2(),
            "classifier.objects" => classifiers.1 = as2(),
            _ => return true,
        }
        false
    });
    if let (Some(st), Some(ob)) = classifiers {
        params.classifiers = Some((st, ob));
    }
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let expected = names.len() - if params.classifiers.is_some() { 2 } else { 0 };
    if expected != loaded.len() {
        return Err(Error::Validation(format!(
            "checkpoint has {} parameter tensors, manifest implies {expected}",
            loaded.len()
        )));
    }
    for ((name, mut slot), (got_name, value)) in names.iter().zip(params.tensors_mut()).zip(&loaded) {
        if name != got_name || slot.shape() != value.shape() {
            return Err(Error::Validation(format!(
                "tensor '{got_name}' {:?} does not match expected '{name}' {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        slot.assign(value);
    }
    Ok(Checkpoint {
        manifest,
        params,
        feasibility,
    })
}
