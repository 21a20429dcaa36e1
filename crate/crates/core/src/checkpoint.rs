//! Self-describing model checkpoints.
//!
//! Binary layout (little-endian):
//!
//! | size  | field                                                  |
//! |-------|--------------------------------------------------------|
//! | 4     | magic `DICM`                                           |
//! | 4     | format version (u32, currently 1)                      |
//! | 4     | metadata length `J` (u32)                              |
//! | J     | UTF-8 JSON metadata, see [`Metadata`]                  |
//! | 8·n   | every parameter value as f64, encoder then decoder,    |
//! |       | in the order and shapes listed in the metadata         |
//! | 4     | CRC-32 (IEEE) of every preceding byte                  |
//!
//! Parameters are stored bit-exactly, so a reloaded model reproduces every
//! forward pass of the saved one.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{Autoencoder, ModelSpec};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::rdo::RatePoint;

pub const MAGIC: [u8; 4] = *b"DICM";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "ckpt";

/// A trained autoencoder and the context it was saved in.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Identifier written into every bitstream this model produces.
    pub model_id: u8,
    pub model: Autoencoder,
    /// Initialisation seed of `model`.
    pub seed: u64,
    /// Rate weight in force when the checkpoint was taken.
    pub lambda: f64,
    pub epoch: usize,
    /// Training loss on the fixed probe batch at save time.
    pub probe_loss: Option<f64>,
    pub rate_point: Option<RatePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// JSON metadata block of a checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub model_id: u8,
    pub spec: ModelSpec,
    pub seed: u64,
    pub lambda: f64,
    pub epoch: usize,
    pub probe_loss: Option<f64>,
    pub rate_point: Option<RatePoint>,
    encoder: Vec<TensorEntry>,
    decoder: Vec<TensorEntry>,
}

fn entries(store: &ParamStore) -> Vec<TensorEntry> {
    store
        .names()
        .iter()
        .zip(store.tensors())
        .map(|(name, t)| TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
        })
        .collect()
}

fn fill(store: &mut ParamStore, listed: &[TensorEntry], values: &mut impl Iterator<Item = f64>, part: &str) -> Result<()> {
    if listed.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "{part} lists {} tensors, the spec builds {}",
            listed.len(),
            store.len()
        )));
    }
    let names = store.names().to_vec();
    for ((entry, name), t) in listed.iter().zip(&names).zip(store.tensors_mut()) {
        if entry.name != *name || entry.shape != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{part} tensor {} {:?} does not match spec tensor {name} {:?}",
                entry.name,
                entry.shape,
                t.shape()
            )));
        }
        for v in t.data_mut() {
            *v = values
                .next()
                .ok_or_else(|| Error::Checkpoint("parameter block truncated".into()))?;
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(model_id: u8, model: Autoencoder, seed: u64) -> Self {
        Self {
            model_id,
            model,
            seed,
            lambda: 0.0,
            epoch: 0,
            probe_loss: None,
            rate_point: None,
        }
    }

    pub fn metadata(&self) -> Metadata {
        Metadata {
            model_id: self.model_id,
            spec: self.model.spec().clone(),
            seed: self.seed,
            lambda: self.lambda,
            epoch: self.epoch,
            probe_loss: self.probe_loss,
            rate_point: self.rate_point,
            encoder: entries(self.model.encoder.params()),
            decoder: entries(self.model.decoder.params()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.metadata())?;
        let n = self.model.encoder.params().numel() + self.model.decoder.params().numel();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * n);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for store in [self.model.encoder.params(), self.model.decoder.params()] {
            for t in store.tensors() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
            return Err(bad("CRC mismatch"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let json_len = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
        let json = body.get(12..12 + json_len).ok_or_else(|| bad("metadata truncated"))?;
        let meta: Metadata = serde_json::from_slice(json)?;
        let raw = &body[12 + json_len..];
        if raw.len() % 8 != 0 {
            return Err(bad("parameter block is not a whole number of f64 values"));
        }
        let mut values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut model = Autoencoder::new(meta.spec.clone(), meta.seed)?;
        fill(model.encoder.params_mut(), &meta.encoder, &mut values, "encoder")?;
        fill(model.decoder.params_mut(), &meta.decoder, &mut values, "decoder")?;
        if values.next().is_some() {
            return Err(bad("trailing parameter data"));
        }
        Ok(Self {
            model_id: meta.model_id,
            model,
            seed: meta.seed,
            lambda: meta.lambda,
            epoch: meta.epoch,
            probe_loss: meta.probe_loss,
            rate_point: meta.rate_point,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Canonical file name of a checkpoint inside a model directory.
pub fn checkpoint_file_name(model_id: u8) -> String {
    format!("{model_id:03}.{EXTENSION}")
}

/// Loads every `*.ckpt` in `dir`, sorted by model id.
pub fn load_model_dir(dir: impl AsRef<Path>) -> Result<Vec<Checkpoint>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(EXTENSION) {
            out.push(Checkpoint::load(&path)?);
        }
    }
    out.sort_by_key(|c| c.model_id);
    if out.windows(2).any(|w| w[0].model_id == w[1].model_id) {
        return Err(Error::Checkpoint("duplicate model ids in model directory".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::EncoderSpec;

    fn ckpt() -> Checkpoint {
        let model = Autoencoder::new(ModelSpec::new(EncoderSpec::miniature(2, 2, 4, 3), 6), 11).unwrap();
        let mut c = Checkpoint::new(5, model, 11);
        c.model.decoder.params_mut().tensors_mut()[0].data_mut()[0] = 0.1 + 0.2;
        c.lambda = 1e-4;
        c.epoch = 104;
        c.probe_loss = Some(0.012345678901234567);
        c.rate_point = Some(RatePoint::new(5, 0.5, 0.9).unwrap());
        c
    }

    #[test]
    fn bit_exact_round_trip() {
        let c = ckpt();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.model.checksum(), c.model.checksum());
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = ckpt().to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }

    #[test]
    fn model_dir_is_sorted_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ckpt();
        a.model_id = 9;
        a.save(dir.path().join(checkpoint_file_name(9))).unwrap();
        ckpt().save(dir.path().join(checkpoint_file_name(5))).unwrap();
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let ids: Vec<u8> = load_model_dir(dir.path()).unwrap().iter().map(|c| c.model_id).collect();
        assert_eq!(ids, vec![5, 9]);
    }
}
