//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `MRUCKPT\0`, a little-endian `u32` manifest
//! length, the UTF-8 JSON manifest, then the payload. The manifest lists
//! every tensor with its byte offset into the payload, the payload length
//! and its SHA-256; tensor values are little-endian IEEE-754 in manifest
//! order.

use std::fs;
use std::path::Path;

use mru_core::data::Vocab;
use mru_core::{DType, ParameterStore, Scalar, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"MRUCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
/// Name of the idf table stored alongside the parameters.
const IDF: &str = "@idf";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: Map<String, Value>,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
    payload_len: usize,
    sha256: String,
}

/// A decoded checkpoint: configuration, vocabulary, idf weights and raw
/// parameter bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vec<String>,
    pub idf: Vec<f64>,
    pub tensors: Vec<TensorEntry>,
    payload: Vec<u8>,
}

fn byte_len(e: &TensorEntry) -> usize {
    e.shape.iter().product::<usize>() * e.dtype.size_of()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn capture<T: Scalar>(
        config: &TrainConfig,
        vocab: &Vocab,
        idf: &[f64],
        store: &ParameterStore<T>,
    ) -> Self {
        let mut payload = Vec::new();
        let mut tensors = Vec::with_capacity(store.len() + 1);
        for p in store.iter() {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                dtype: T::DTYPE,
                offset: payload.len(),
            });
            for &v in p.value.data() {
                v.write_le(&mut payload);
            }
        }
        Checkpoint {
            config: config.clone(),
            vocab: vocab.tokens().to_vec(),
            idf: idf.to_vec(),
            tensors,
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = self.payload.clone();
        let mut tensors = self.tensors.clone();
        tensors.push(TensorEntry {
            name: IDF.to_string(),
            shape: vec![self.idf.len()],
            dtype: DType::Fp64,
            offset: payload.len(),
        });
        for &v in &self.idf {
            v.write_le(&mut payload);
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config.to_map(),
            vocab: self.vocab.clone(),
            tensors,
            payload_len: payload.len(),
            sha256: hex(&Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(12 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    /// Decodes and verifies a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| HarnessError::checkpoint(path, msg);
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let mlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() < mlen {
            return Err(bad(format!(
                "truncated manifest: {} of {mlen} bytes",
                body.len()
            )));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen])
            .map_err(|e| bad(format!("unreadable manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "format version {} (this build reads {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let payload = &body[mlen..];
        if payload.len() != manifest.payload_len {
            return Err(bad(format!(
                "payload is {} bytes, manifest says {}",
                payload.len(),
                manifest.payload_len
            )));
        }
        let mut expected = 0;
        for e in &manifest.tensors {
            if e.offset != expected {
                return Err(bad(format!(
                    "tensor `{}` at offset {}, expected {expected}",
                    e.name, e.offset
                )));
            }
            expected += byte_len(e);
        }
        if expected != payload.len() {
            return Err(bad(format!(
                "tensors cover {expected} bytes of a {}-byte payload",
                payload.len()
            )));
        }
        if hex(&Sha256::digest(payload)) != manifest.sha256 {
            return Err(bad("payload checksum mismatch (corrupted file)".into()));
        }
        let config = TrainConfig::from_json(
            &Value::Object(manifest.config).to_string(),
            &path.display().to_string(),
        )?;
        let mut tensors = manifest.tensors;
        let idf_entry = tensors
            .pop()
            .filter(|e| e.name == IDF && e.dtype == DType::Fp64);
        let Some(idf_entry) = idf_entry else {
            return Err(bad("missing idf table".into()));
        };
        let idf = payload[idf_entry.offset..]
            .chunks_exact(8)
            .map(f64::read_le)
            .collect();
        Ok(Checkpoint {
            config,
            vocab: manifest.vocab,
            idf,
            tensors,
            payload: payload[..idf_entry.offset].to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Ok(Vocab::from_tokens(self.vocab.clone())?)
    }

    /// Copies every stored tensor into `store`, which must hold parameters of
    /// the same names, shapes and element type in the same order.
    pub fn restore<T: Scalar>(&self, store: &mut ParameterStore<T>) -> Result<()> {
        let bad = |msg: String| HarnessError::checkpoint("<memory>", msg);
        if store.len() != self.tensors.len() {
            return Err(bad(format!(
                "{} stored tensors for {} parameters",
                self.tensors.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, e) in ids.into_iter().zip(&self.tensors) {
            let p = store.get(id);
            if p.name != e.name || p.value.shape() != e.shape.as_slice() {
                return Err(bad(format!(
                    "stored `{}` {:?} does not match parameter `{}` {:?}",
                    e.name,
                    e.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            if e.dtype != T::DTYPE {
                return Err(bad(format!(
                    "stored `{}` is {}, store is {}",
                    e.name,
                    e.dtype,
                    T::DTYPE
                )));
            }
            let bytes = &self.payload[e.offset..e.offset + byte_len(e)];
            let data = bytes
                .chunks_exact(e.dtype.size_of())
                .map(T::read_le)
                .collect();
            store.set_value(id, Tensor::new(&e.shape, data)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mru_core::{Rng, Store32};

    fn sample() -> Checkpoint {
        let mut store = Store32::new();
        let mut rng = Rng::new(3);
        store
            .add("a", rng.uniform_tensor(&[2, 3], -1.0, 1.0))
            .unwrap();
        store.add("b", rng.uniform_tensor(&[4], -1.0, 1.0)).unwrap();
        let toks: Vec<String> = vec!["x".into(), "ÿ".into()];
        let vocab = Vocab::build([toks.as_slice()]);
        Checkpoint::capture(
            &TrainConfig::default(),
            &vocab,
            &[1.0, 1.5, 0.1, 2.0],
            &store,
        )
    }

    #[test]
    fn bytes_round_trip_is_stable() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("m")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        let err = Checkpoint::from_bytes(&flipped, Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 4], Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("payload is"), "{err}");
        let key = b"\"format_version\":1";
        let at = bytes.windows(key.len()).position(|w| w == key).unwrap();
        let mut versioned = bytes.clone();
        versioned[at + key.len() - 1] = b'9';
        let err = Checkpoint::from_bytes(&versioned, Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }

    #[test]
    fn restore_checks_layout_and_dtype() {
        let c = sample();
        let mut wrong = Store32::new();
        wrong.add("a", Tensor::zeros(&[3, 2])).unwrap();
        wrong.add("b", Tensor::zeros(&[4])).unwrap();
        assert!(c.restore(&mut wrong).is_err());
        let mut wide = mru_core::Store64::new();
        wide.add("a", Tensor::zeros(&[2, 3])).unwrap();
        wide.add("b", Tensor::zeros(&[4])).unwrap();
        assert!(c.restore(&mut wide).is_err());
    }
}
