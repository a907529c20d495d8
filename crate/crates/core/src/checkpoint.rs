//! Binary checkpoint format.
//!
//! Layout: 8 magic bytes, format version (u32 LE), header length (u64 LE),
//! a JSON header (tensor names, shapes, payload offsets, flat config echo,
//! training state, payload checksum), then the raw little-endian float
//! payload. Save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Error;
use crate::model::Model;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 8] = b"GLSNCKP\0";
pub const FORMAT_VERSION: u32 = 1;

#[cfg(feature = "real32")]
const DTYPE: &str = "f32";
#[cfg(not(feature = "real32"))]
const DTYPE: &str = "f64";

const ELEM_BYTES: usize = std::mem::size_of::<Real>();

/// In-memory checkpoint: every learnable tensor plus optimizer state,
/// the flat config echo, and training progress.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, serde_json::Value>,
    /// Gloss vocabulary of the training manifest, in class-id order.
    pub vocabulary: Vec<String>,
    pub epoch: u64,
    pub best_val_top1: f64,
    pub optim_step: u64,
    pub rng_state: [u64; 4],
    /// Ordered (name, tensor) pairs; model parameters first, then optimizer
    /// moments under `optim.m.` / `optim.v.` prefixes.
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
    /// Element count.
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    vocabulary: Vec<String>,
    epoch: u64,
    best_val_top1: f64,
    optim_step: u64,
    rng_state: [u64; 4],
    config: BTreeMap<String, serde_json::Value>,
    tensors: Vec<TensorMeta>,
    payload_checksum: u32,
}

/// CRC-32 (IEEE), table variant.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 {
                0xEDB8_8320 ^ (c >> 1)
            } else {
                c >> 1
            };
        }
        *entry = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn save(ck: &Checkpoint, path: &Path) -> Result<(), Error> {
    let mut seen = HashSet::new();
    for (name, _) in &ck.tensors {
        if !seen.insert(name.as_str()) {
            return Err(Error::Checkpoint(format!("duplicate tensor name {name:?}")));
        }
    }

    let mut payload: Vec<u8> = Vec::new();
    let mut metas = Vec::with_capacity(ck.tensors.len());
    for (name, t) in &ck.tensors {
        metas.push(TensorMeta {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: payload.len() as u64,
            len: t.numel() as u64,
        });
        for &x in t.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }

    let header = Header {
        version: FORMAT_VERSION,
        dtype: DTYPE.to_string(),
        vocabulary: ck.vocabulary.clone(),
        epoch: ck.epoch,
        best_val_top1: ck.best_val_top1,
        optim_step: ck.optim_step,
        rng_state: ck.rng_state,
        config: ck.config.clone(),
        tensors: metas,
        payload_checksum: crc32(&payload),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut write = |bytes: &[u8]| file.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&FORMAT_VERSION.to_le_bytes())?;
    write(&(header_bytes.len() as u64).to_le_bytes())?;
    write(&header_bytes)?;
    write(&payload)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, Error> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;

    let take = |bytes: &[u8], at: usize, n: usize| -> Result<Vec<u8>, Error> {
        bytes
            .get(at..at + n)
            .map(|s| s.to_vec())
            .ok_or_else(|| Error::Checkpoint(format!("{}: file truncated", path.display())))
    };

    let magic = take(&bytes, 0, 8)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic bytes",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(take(&bytes, 8, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {version} unsupported (expected {FORMAT_VERSION})",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(take(&bytes, 12, 8)?.try_into().unwrap()) as usize;
    let header_bytes = take(&bytes, 20, header_len)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: header parse: {e}", path.display())))?;
    if header.dtype != DTYPE {
        return Err(Error::Checkpoint(format!(
            "{}: payload dtype {} does not match this build ({DTYPE})",
            path.display(),
            header.dtype
        )));
    }

    let payload = &bytes[20 + header_len..];
    if crc32(payload) != header.payload_checksum {
        return Err(Error::Checkpoint(format!(
            "{}: payload checksum mismatch (corrupt or truncated)",
            path.display()
        )));
    }

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for meta in &header.tensors {
        let start = meta.offset as usize;
        let nbytes = meta.len as usize * ELEM_BYTES;
        let slice = payload.get(start..start + nbytes).ok_or_else(|| {
            Error::Checkpoint(format!(
                "{}: tensor {} extends past payload",
                path.display(),
                meta.name
            ))
        })?;
        let data: Vec<Real> = slice
            .chunks_exact(ELEM_BYTES)
            .map(|c| Real::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((meta.name.clone(), Tensor::from_vec(&meta.shape, data)?));
    }

    Ok(Checkpoint {
        config: header.config,
        vocabulary: header.vocabulary,
        epoch: header.epoch,
        best_val_top1: header.best_val_top1,
        optim_step: header.optim_step,
        rng_state: header.rng_state,
        tensors,
    })
}

/// Rebuild a model from a checkpoint: the echoed config defines the
/// architecture, then every parameter is overwritten by name with shape
/// validation.
pub fn restore_model(ck: &Checkpoint) -> Result<(Model, RunConfig), Error> {
    let run_cfg = RunConfig::from_flat_json(&ck.config)?;
    if run_cfg.model_class_count == 0 {
        return Err(Error::Checkpoint(
            "checkpoint config echo is missing the resolved class count".into(),
        ));
    }
    let model_cfg = run_cfg.model_config(0)?;
    let mut model = Model::init(model_cfg, &mut Rng::new(0))?;
    for (name, param) in model.named_mut() {
        let stored = ck
            .tensor(&name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint is missing tensor {name:?}")))?;
        if stored.shape() != param.shape() {
            return Err(Error::Shape(format!(
                "{name}: checkpoint shape {:?} does not match model shape {:?}",
                stored.shape(),
                param.shape()
            )));
        }
        *param = stored.clone();
    }
    Ok((model, run_cfg))
}
