//! The `.ocrm` model file.
//!
//! Layout, all integers little endian:
//!
//! ```text
//! "OCRM" | version: u32 | header_len: u32 | header: UTF-8 JSON | payload
//! ```
//!
//! The header declares the codec (code points, blank = 0 first), the immune
//! set, the architecture, the parameter blocks with their shapes in payload
//! order, seed lineage and training provenance. `payload_offset` is the byte
//! offset of the payload from the start of the file. The payload is the
//! concatenation of every block as row-major `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Codec;
use crate::linenet::{Network, Params, BLOCK_NAMES};

pub const MAGIC: &[u8; 4] = b"OCRM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload shape mismatch: header declares {declared} bytes, file holds {actual}")]
    ShapeMismatch { declared: usize, actual: usize },
    #[error("codec has {codec} symbols but the output matrix has {rows} rows")]
    CodecMismatch { codec: usize, rows: usize },
    #[error("invalid network: {0}")]
    Network(String),
}

/// Where a model came from. Never contains timestamps or absolute paths so
/// that saving is reproducible.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// `fresh`, `pretrained` or empty when unknown.
    #[serde(default)]
    pub init: String,
    /// File name of the model training started from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_model: Option<String>,
    #[serde(default)]
    pub iteration: u64,
    #[serde(default)]
    pub training_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub payload_offset: u64,
    pub codec: Vec<u32>,
    pub immune: Vec<u32>,
    pub input_height: usize,
    pub hidden_size: usize,
    pub blocks: Vec<BlockInfo>,
    pub seed_lineage: Vec<u64>,
    pub provenance: Provenance,
}

impl ModelHeader {
    fn payload_len(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.shape.iter().product::<usize>() * 4)
            .sum()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize a network. Identical networks give identical bytes.
pub fn to_bytes(net: &Network, provenance: &Provenance) -> Vec<u8> {
    let codec = net.codec();
    let blocks = net.params().blocks();
    let mut header = ModelHeader {
        payload_offset: 0,
        codec: codec.symbols().iter().map(|&c| c as u32).collect(),
        immune: codec.immune().iter().map(|&c| c as u32).collect(),
        input_height: net.input_height(),
        hidden_size: net.hidden_size(),
        blocks: blocks
            .iter()
            .map(|(name, shape, _)| BlockInfo {
                name: name.to_string(),
                shape: shape.clone(),
            })
            .collect(),
        seed_lineage: net.seed_lineage().to_vec(),
        provenance: provenance.clone(),
    };
    // the offset is part of the header, so iterate until its width settles
    let mut json = serde_json::to_vec(&header).expect("header serializes");
    loop {
        let offset = (12 + json.len()) as u64;
        if header.payload_offset == offset {
            break;
        }
        header.payload_offset = offset;
        json = serde_json::to_vec(&header).expect("header serializes");
    }
    let mut out = Vec::with_capacity(header.payload_offset as usize + header.payload_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, data) in blocks {
        for &v in data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save(net: &Network, provenance: &Provenance, path: &Path) -> Result<(), ModelError> {
    let bytes = to_bytes(net, provenance);
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&bytes).map_err(io_err(path))?;
    Ok(())
}

/// Parse only the header.
pub fn read_header(bytes: &[u8]) -> Result<ModelHeader, ModelError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ModelError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(ModelError::Header("file too short".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ModelError::Version(version));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| ModelError::Header("header extends past end of file".into()))?;
    let header: ModelHeader =
        serde_json::from_slice(json).map_err(|e| ModelError::Header(e.to_string()))?;
    if header.payload_offset as usize != 12 + header_len {
        return Err(ModelError::Header(format!(
            "payload offset {} does not follow the header",
            header.payload_offset
        )));
    }
    Ok(header)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Network, ModelHeader), ModelError> {
    let header = read_header(bytes)?;
    let payload = &bytes[header.payload_offset as usize..];
    let declared = header.payload_len();
    if payload.len() != declared {
        return Err(ModelError::ShapeMismatch {
            declared,
            actual: payload.len(),
        });
    }
    let names: Vec<&str> = header.blocks.iter().map(|b| b.name.as_str()).collect();
    if names != BLOCK_NAMES {
        return Err(ModelError::Header(format!("unexpected block list {names:?}")));
    }
    let symbols = header
        .codec
        .iter()
        .map(|&c| char::from_u32(c).ok_or_else(|| ModelError::Header(format!("invalid code point {c}"))))
        .collect::<Result<Vec<char>, _>>()?;
    let immune = header
        .immune
        .iter()
        .map(|&c| char::from_u32(c).ok_or_else(|| ModelError::Header(format!("invalid code point {c}"))))
        .collect::<Result<Vec<char>, _>>()?;
    let codec = Codec::from_parts(symbols, immune).map_err(|e| ModelError::Header(e.to_string()))?;
    let output_rows = header.blocks[6].shape.first().copied().unwrap_or(0);
    if output_rows != codec.len() || header.blocks[7].shape.first().copied() != Some(codec.len()) {
        return Err(ModelError::CodecMismatch {
            codec: codec.len(),
            rows: output_rows,
        });
    }

    let mut params = Params::zeros(header.input_height, header.hidden_size, codec.len());
    let expected: Vec<Vec<usize>> = params.blocks().into_iter().map(|(_, s, _)| s).collect();
    let declared: Vec<Vec<usize>> = header.blocks.iter().map(|b| b.shape.clone()).collect();
    if expected != declared {
        return Err(ModelError::Network(
            "block shapes do not match the declared architecture".into(),
        ));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    for block in params.blocks_mut() {
        for v in block.iter_mut() {
            *v = floats.next().expect("length checked");
        }
    }
    let net = Network::from_parts(
        header.input_height,
        header.hidden_size,
        params,
        codec,
        header.seed_lineage.clone(),
    )
    .map_err(|e| ModelError::Network(e.to_string()))?;
    Ok((net, header))
}

pub fn load(path: &Path) -> Result<Network, ModelError> {
    load_with_header(path).map(|(net, _)| net)
}

pub fn load_with_header(path: &Path) -> Result<(Network, ModelHeader), ModelError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    from_bytes(&bytes)
}
