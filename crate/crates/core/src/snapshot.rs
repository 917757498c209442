//! Versioned binary container for [`ModelSnapshot`].
//!
//! Layout: `FINDSNAP` magic, `u32` format version, `u64` header length, a
//! JSON header (config, block table, vocabulary), the parameter blocks as
//! little-endian `f64`, and a trailing SHA-256 of everything before it.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{init_model, ModelConfig, ModelSnapshot};

pub const MAGIC: &[u8; 8] = b"FINDSNAP";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;
const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    architecture: String,
    config: ModelConfig,
    blocks: Vec<BlockInfo>,
    vocabulary: Vec<String>,
    vocabulary_fingerprint: String,
    embedding_dim: usize,
    embedding_coverage_bits: u64,
    embedding_fingerprint: String,
}

pub fn to_bytes(model: &ModelSnapshot) -> Vec<u8> {
    let mut blocks: Vec<(String, &[f64])> = model
        .block_names()
        .into_iter()
        .zip(model.all_blocks())
        .collect();
    blocks.push(("embeddings".into(), model.embeddings.data()));

    let header = Header {
        architecture: model.arch_tag().to_string(),
        config: model.config.clone(),
        blocks: blocks
            .iter()
            .map(|(name, b)| BlockInfo {
                name: name.clone(),
                len: b.len(),
            })
            .collect(),
        vocabulary: model.vocab.words().to_vec(),
        vocabulary_fingerprint: model.vocab.fingerprint(),
        embedding_dim: model.embeddings.dim(),
        embedding_coverage_bits: model.embeddings.coverage().to_bits(),
        embedding_fingerprint: model.embeddings.fingerprint(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");

    let body: usize = blocks.iter().map(|(_, b)| b.len() * 8).sum();
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + body + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, block) in &blocks {
        for v in block.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelSnapshot> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::CorruptSnapshot("missing snapshot magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::SnapshotVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < PREFIX_LEN + CHECKSUM_LEN {
        return Err(Error::CorruptSnapshot("file is truncated".into()));
    }
    let (payload, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(payload).as_slice() != checksum {
        return Err(Error::CorruptSnapshot("checksum mismatch (truncated or modified file)".into()));
    }
    let header_len = u64::from_le_bytes(payload[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&end| end <= payload.len())
        .ok_or_else(|| Error::CorruptSnapshot("header length exceeds file".into()))?;
    let header: Header = serde_json::from_slice(&payload[PREFIX_LEN..header_end])
        .map_err(|e| Error::CorruptSnapshot(format!("bad header: {e}")))?;

    let mut cursor = header_end;
    let mut blocks = Vec::with_capacity(header.blocks.len());
    for info in &header.blocks {
        let end = info
            .len
            .checked_mul(8)
            .and_then(|n| cursor.checked_add(n))
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| Error::CorruptSnapshot(format!("block {} exceeds file", info.name)))?;
        let values: Vec<f64> = payload[cursor..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blocks.push((info.name.as_str(), values));
        cursor = end;
    }
    if cursor != payload.len() {
        return Err(Error::CorruptSnapshot("trailing bytes after parameter blocks".into()));
    }

    let Some((_, embedding_data)) = blocks.pop().filter(|(n, _)| *n == "embeddings") else {
        return Err(Error::CorruptSnapshot("embedding block missing".into()));
    };
    let vocab = Vocabulary::from_words(header.vocabulary);
    if vocab.fingerprint() != header.vocabulary_fingerprint {
        return Err(Error::CorruptSnapshot("vocabulary fingerprint mismatch".into()));
    }
    let embeddings = EmbeddingTable::from_rows(
        header.embedding_dim,
        embedding_data,
        f64::from_bits(header.embedding_coverage_bits),
    )?;
    if embeddings.fingerprint() != header.embedding_fingerprint {
        return Err(Error::CorruptSnapshot("embedding fingerprint mismatch".into()));
    }

    let mut model = init_model(header.config, Arc::new(vocab), Arc::new(embeddings))
        .map_err(|e| Error::CorruptSnapshot(format!("inconsistent config: {e}")))?;
    if model.arch_tag() != header.architecture {
        return Err(Error::CorruptSnapshot("architecture tag does not match config".into()));
    }
    let names = model.block_names();
    let mut targets = model.all_blocks_mut();
    if targets.len() != blocks.len() {
        return Err(Error::CorruptSnapshot("unexpected number of parameter blocks".into()));
    }
    for ((target, (name, values)), expected) in targets.iter_mut().zip(&blocks).zip(&names) {
        if name != expected || target.len() != values.len() {
            return Err(Error::CorruptSnapshot(format!("block {name} does not match the architecture")));
        }
        target.copy_from_slice(values);
    }
    if !model.head.mask_is_columnar() {
        return Err(Error::CorruptSnapshot("mask columns must be all ones or all zeros".into()));
    }
    Ok(model)
}

pub fn save_snapshot(model: &ModelSnapshot, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_snapshot(path: &Path) -> Result<ModelSnapshot> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Content address of a serialized snapshot.
pub fn snapshot_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..16])
}
