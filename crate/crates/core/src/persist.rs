//! Model file container.
//!
//! ```text
//! offset  size  content
//! 0       8     magic b"DEEPESN\0"
//! 8       4     header length H, u32 little-endian
//! 12      H     UTF-8 JSON header (ModelHeader)
//! 12+H    8*n   payload: f64 little-endian, matrices row-major, in header order
//! ```
//!
//! The header echoes the full configuration, the readout segment layout and
//! the name, shape and payload offset (in values) of every matrix.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::encoder::FittedEncoder;
use crate::error::{Error, Result};
use crate::reservoir::ReservoirLayer;
use crate::stack::{DeepEsnConfig, DeepEsnModel, Segment};

pub const MAGIC: &[u8; 8] = b"DEEPESN\0";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Index of the first value in the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelHeader {
    pub schema_version: u32,
    pub config: DeepEsnConfig,
    pub input_dim: usize,
    pub output_dim: usize,
    pub segments: Vec<Segment>,
    pub matrices: Vec<MatrixEntry>,
    pub payload_values: usize,
}

struct Payload {
    entries: Vec<MatrixEntry>,
    values: Vec<f64>,
}

impl Payload {
    fn push(&mut self, name: String, m: &DMatrix<f64>) {
        self.entries.push(MatrixEntry {
            name,
            rows: m.nrows(),
            cols: m.ncols(),
            offset: self.values.len(),
        });
        for row in m.row_iter() {
            self.values.extend(row.iter());
        }
    }
}

pub fn to_bytes(model: &DeepEsnModel) -> Result<Vec<u8>> {
    let mut payload = Payload {
        entries: Vec::new(),
        values: Vec::new(),
    };
    for (i, r) in model.reservoirs().iter().enumerate() {
        payload.push(format!("reservoir.{i}.w_in"), r.input_weights());
        payload.push(format!("reservoir.{i}.w_res"), r.recurrent_weights());
    }
    for (j, e) in model.encoders().iter().enumerate() {
        payload.push(format!("encoder.{j}.w_enc"), e.weights());
        payload.push(
            format!("encoder.{j}.mean"),
            &DMatrix::from_row_slice(1, e.mean().len(), e.mean().as_slice()),
        );
    }
    payload.push("readout.w_out".into(), model.readout());

    let header = ModelHeader {
        schema_version: SCHEMA_VERSION,
        config: model.config().clone(),
        input_dim: model.config().input_dim(),
        output_dim: model.output_dim(),
        segments: model.config().layout(),
        matrices: payload.entries,
        payload_values: payload.values.len(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * payload.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<DeepEsnModel> {
    let corrupt = |msg: &str| Error::CorruptModel(msg.to_string());
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic number"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < header_len {
        return Err(corrupt("truncated header"));
    }
    let raw: serde_json::Value = serde_json::from_slice(&body[..header_len])
        .map_err(|e| Error::CorruptModel(format!("header is not JSON: {e}")))?;
    let version = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("header has no schema_version"))?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version as u32,
            supported: SCHEMA_VERSION,
        });
    }
    let header: ModelHeader = serde_json::from_value(raw)
        .map_err(|e| Error::CorruptModel(format!("malformed header: {e}")))?;

    let data = &body[header_len..];
    if data.len() != 8 * header.payload_values {
        return Err(Error::CorruptModel(format!(
            "payload holds {} bytes, header declares {} values",
            data.len(),
            header.payload_values
        )));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let matrix = |name: &str| -> Result<DMatrix<f64>> {
        let entry = header
            .matrices
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::CorruptModel(format!("missing matrix {name}")))?;
        let end = entry.offset + entry.rows * entry.cols;
        if end > values.len() {
            return Err(Error::CorruptModel(format!("matrix {name} overruns payload")));
        }
        Ok(DMatrix::from_row_slice(
            entry.rows,
            entry.cols,
            &values[entry.offset..end],
        ))
    };

    let config = header.config.clone();
    config
        .validate()
        .map_err(|e| Error::CorruptModel(format!("invalid stored configuration: {e}")))?;
    let reservoirs = config
        .layers
        .iter()
        .enumerate()
        .map(|(i, p)| {
            ReservoirLayer::from_weights(
                *p,
                matrix(&format!("reservoir.{i}.w_in"))?,
                matrix(&format!("reservoir.{i}.w_res"))?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let encoders = config
        .encoders
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let mean = matrix(&format!("encoder.{j}.mean"))?;
            FittedEncoder::from_parts(
                *s,
                matrix(&format!("encoder.{j}.w_enc"))?,
                DVector::from_column_slice(mean.as_slice()),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let readout = matrix("readout.w_out")?;
    DeepEsnModel::from_parts(config, reservoirs, encoders, readout)
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save(model: &DeepEsnModel, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model)?)
}

pub fn load(path: &Path) -> Result<DeepEsnModel> {
    from_bytes(&fs::read(path)?)
}
