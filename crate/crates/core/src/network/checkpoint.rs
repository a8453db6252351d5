//! Single-file checkpoints: a magic line, a little-endian `u64` header
//! length, a JSON header (version, model config, seed, tensor index) and
//! the raw little-endian `f64` payload.

use super::{Model, ModelConfig};
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8] = b"GPVD-CHECKPOINT\n";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in `f64` elements from the start of the payload.
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    seed: u64,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
    tensors: Vec<TensorEntry>,
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub meta: BTreeMap<String, serde_json::Value>,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<Model> {
        let mut model = Model::new(self.config, self.seed)?;
        model.store.load(self.params)?;
        Ok(model)
    }
}

pub fn save_checkpoint(model: &Model, path: &Path, meta: BTreeMap<String, serde_json::Value>) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for (name, t) in model.store.named() {
        tensors.push(TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset });
        offset += t.len();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header { version: CHECKPOINT_VERSION, config: model.cfg.clone(), seed: model.seed, meta, tensors };
    let json = serde_json::to_vec(&header).map_err(|e| Error::io(path, e))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(MAGIC)
        .and_then(|_| f.write_all(&(json.len() as u64).to_le_bytes()))
        .and_then(|_| f.write_all(&json))
        .and_then(|_| f.write_all(&payload))
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::io(path, format!("not a valid checkpoint: {msg}"));
    if !bytes.starts_with(MAGIC) {
        return Err(bad("missing magic line"));
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let hlen = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let rest = &rest[8..];
    if rest.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen]).map_err(|e| bad(&e.to_string()))?;
    if header.version > CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {}", header.version)));
    }
    let payload = &rest[hlen..];
    let mut params = BTreeMap::new();
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let (start, end) = (e.offset * 8, (e.offset + n) * 8);
        if end > payload.len() {
            return Err(bad(&format!("tensor {} runs past the payload", e.name)));
        }
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(e.name, Tensor::new(&e.shape, data)?);
    }
    Ok(Checkpoint { version: header.version, config: header.config, seed: header.seed, meta: header.meta, params })
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    read_checkpoint(path)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut model = Model::new(ModelConfig::tiny(4), 3).unwrap();
        let id = model.store.ids().nth(5).unwrap();
        model.store.get_mut(id).data_mut()[0] = 0.123456789;
        let mut meta = BTreeMap::new();
        meta.insert("step".into(), serde_json::json!(7));
        save_checkpoint(&model, &path, meta).unwrap();
        let ck = read_checkpoint(&path).unwrap();
        assert_eq!(ck.meta["step"], 7);
        let back = ck.into_model().unwrap();
        assert_eq!(back.cfg, model.cfg);
        for ((n1, a), (n2, b)) in back.store.named().zip(model.store.named()) {
            assert_eq!(n1, n2);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        std::fs::write(&path, b"hello").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Io { .. })));
        assert!(matches!(read_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
