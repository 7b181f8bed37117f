//! Feature matrices and the `PIQE` binary embedding format.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `PIQE` |
//! | 4     | version, u32 = 1 |
//! | 8     | row count N, u64 |
//! | 4     | width D, u32 |
//! | 4·N·D | f32 payload, row-major |
//!
//! Row image ids live in a sidecar CSV (`image_id` header, one id per row),
//! by default next to the binary with the extension `ids.csv`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PIQE";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("not a PIQE file")]
    BadMagic,
    #[error("unsupported PIQE version {0}")]
    UnsupportedVersion(u32),
    #[error("payload holds {found} bytes, header implies {expected}")]
    PayloadLength { expected: u64, found: u64 },
    #[error("{rows} embedding rows but {ids} sidecar ids")]
    SidecarMismatch { rows: usize, ids: usize },
}

/// N×D feature rows with the image id of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub ids: Vec<String>,
    pub rows: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, rows: Array2<f64>) -> Result<Self, EmbeddingError> {
        if ids.len() != rows.nrows() {
            return Err(EmbeddingError::SidecarMismatch {
                rows: rows.nrows(),
                ids: ids.len(),
            });
        }
        Ok(Self { ids, rows })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Rows whose ids satisfy `keep`, in their original order.
    pub fn select(&self, mut keep: impl FnMut(&str) -> bool) -> EmbeddingMatrix {
        let picked: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.ids[i])).collect();
        let rows = self.rows.select(ndarray::Axis(0), &picked);
        EmbeddingMatrix {
            ids: picked.iter().map(|&i| self.ids[i].clone()).collect(),
            rows,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("ids.csv")
}

pub fn encode(rows: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * rows.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(rows.ncols() as u32).to_le_bytes());
    for v in rows.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Array2<f64>, EmbeddingError> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(EmbeddingError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(EmbeddingError::UnsupportedVersion(version));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as u64;
    let payload = &bytes[HEADER_LEN..];
    let expected = n.checked_mul(d).and_then(|v| v.checked_mul(4));
    if expected != Some(payload.len() as u64) {
        return Err(EmbeddingError::PayloadLength {
            expected: expected.unwrap_or(u64::MAX),
            found: payload.len() as u64,
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Array2::from_shape_vec((n as usize, d as usize), values).expect("length checked"))
}

pub fn write_embeddings(path: &Path, matrix: &EmbeddingMatrix) -> Result<(), EmbeddingError> {
    fs::write(path, encode(&matrix.rows))?;
    let mut writer = csv::Writer::from_path(sidecar_path(path))?;
    writer.write_record(["image_id"])?;
    for id in &matrix.ids {
        writer.write_record([id])?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a PIQE file and its sidecar. `ids_path` overrides the default
/// sidecar location.
pub fn read_embeddings(path: &Path, ids_path: Option<&Path>) -> Result<EmbeddingMatrix, EmbeddingError> {
    let rows = decode(&fs::read(path)?)?;
    let sidecar = ids_path.map(Path::to_path_buf).unwrap_or_else(|| sidecar_path(path));
    let mut reader = csv::Reader::from_path(sidecar)?;
    let ids = reader
        .records()
        .map(|r| r.map(|r| r.get(0).unwrap_or_default().to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    EmbeddingMatrix::new(ids, rows)
}
