//! Binary checkpoint files.
//!
//! Layout: the 8-byte magic `NANETCK1`, a little-endian `u64` header length,
//! a JSON header, then the payload of raw little-endian `f32` values in
//! tensor-table order. The header carries a CRC32 of the payload.

use std::fs;
use std::path::Path;

use nanet_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::model::{AutoencoderConfig, ClassifierConfig, NanetParams};
use crate::train::TrainConfig;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"NANETCK1";
const PREFIX_LEN: usize = MAGIC.len() + 8;

/// Trained parameters with the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NanetParams,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_offset: u64,
    byte_len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    autoencoder: AutoencoderConfig,
    classifier: ClassifierConfig,
    train: TrainConfig,
    tensors: Vec<TensorEntry>,
    checksum: u32,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.params.num_scalars() * 4);
        let mut tensors = Vec::new();
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            let byte_offset = payload.len() as u64;
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                byte_offset,
                byte_len: payload.len() as u64 - byte_offset,
            });
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            autoencoder: self.params.autoencoder.clone(),
            classifier: self.params.classifier.clone(),
            train: self.config.clone(),
            tensors,
            checksum: crc32fast::hash(&payload),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX_LEN {
            if MAGIC.starts_with(&bytes[..bytes.len().min(MAGIC.len())]) {
                return Err(Error::ChecksumMismatch(format!("file truncated to {} bytes", bytes.len())));
            }
            return Err(Error::MalformedCheckpoint("not a checkpoint file".into()));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::MalformedCheckpoint("not a checkpoint file".into()));
        }
        let header_len = u64::from_le_bytes(bytes[MAGIC.len()..PREFIX_LEN].try_into().expect("8 bytes"));
        let body = &bytes[PREFIX_LEN..];
        if (body.len() as u64) < header_len {
            return Err(Error::ChecksumMismatch(format!(
                "file truncated inside the header ({} of {header_len} bytes)",
                body.len()
            )));
        }
        let (header, payload) = body.split_at(header_len as usize);
        let header: Header =
            serde_json::from_slice(header).map_err(|e| Error::MalformedCheckpoint(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: header.format_version, expected: FORMAT_VERSION });
        }
        let actual = crc32fast::hash(payload);
        if actual != header.checksum {
            return Err(Error::ChecksumMismatch(format!(
                "payload crc32 {actual:08x}, header says {:08x}",
                header.checksum
            )));
        }
        let mut names = Vec::with_capacity(header.tensors.len());
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let numel: usize = e.shape.iter().product();
            let range = e.byte_offset as usize..(e.byte_offset + e.byte_len) as usize;
            if e.dtype != "f32" || e.byte_len as usize != numel * 4 || range.end > payload.len() {
                return Err(Error::MalformedCheckpoint(format!("bad tensor entry {}", e.name)));
            }
            let data =
                payload[range].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            tensors.push(Tensor::new(e.shape, data).map_err(|err| Error::MalformedCheckpoint(err.to_string()))?);
            names.push(e.name);
        }
        let params = NanetParams::from_parts(header.autoencoder, header.classifier, names, tensors)
            .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        Ok(Checkpoint { params, config: header.train })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
