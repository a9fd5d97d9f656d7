//! Binary checkpoint container: magic, format version, a JSON header with
//! the configuration and parameter shapes, then every parameter as
//! little-endian `f64` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PCADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training provenance stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epochs: usize,
    pub steps: u64,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: CheckpointMeta,
    params: Vec<ParamEntry>,
}

pub fn write_checkpoint(mut w: impl Write, model: &Model, meta: &CheckpointMeta) -> Result<(), ModelError> {
    let header = Header {
        config: model.config.clone(),
        meta: meta.clone(),
        params: model
            .store
            .ids()
            .map(|id| ParamEntry {
                name: model.store.name(id).to_string(),
                shape: model.store.get(id).shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in model.store.tensors() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &Model, meta: &CheckpointMeta) -> Result<(), ModelError> {
    write_checkpoint(BufWriter::new(File::create(path)?), model, meta)
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(Model, CheckpointMeta), ModelError> {
    let malformed = |m: &str| ModelError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| malformed("truncated magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(malformed("not a checkpoint file (bad magic)"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| malformed("truncated version"))?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::CheckpointMismatch(format!(
            "format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| malformed("truncated header length"))?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| malformed("header length overflows"))?;
    let mut json = Vec::new();
    (&mut r).take(len as u64).read_to_end(&mut json)?;
    if json.len() != len {
        return Err(malformed("truncated header"));
    }
    let header: Header = serde_json::from_slice(&json).map_err(|e| ModelError::Checkpoint(format!("bad header: {e}")))?;
    let mut model = Model::new(header.config, 0).map_err(|e| ModelError::CheckpointMismatch(e.to_string()))?;
    if header.params.len() != model.store.len() {
        return Err(ModelError::CheckpointMismatch(format!(
            "{} parameters stored, configuration defines {}",
            header.params.len(),
            model.store.len()
        )));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for (entry, id) in header.params.iter().zip(ids) {
        let expected = model.store.get(id).shape().to_vec();
        if entry.name != model.store.name(id) || entry.shape != expected {
            return Err(ModelError::CheckpointMismatch(format!(
                "parameter {} {:?} does not match {} {:?}",
                entry.name,
                entry.shape,
                model.store.name(id),
                expected
            )));
        }
        let count: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| ModelError::Checkpoint(format!("truncated data for {}", entry.name)))?;
        let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        *model.store.get_mut(id) = Tensor::new(expected, data)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(malformed("trailing bytes after parameter data"));
    }
    Ok((model, header.meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta), ModelError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
