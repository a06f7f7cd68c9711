//! Binary checkpoints.
//!
//! A checkpoint is one JSON header line followed by the raw field data:
//!
//! ```text
//! {"schema_version":1,"header_bytes":320,...,"sha256":"…"}   \n
//! <body: little-endian f64 samples>
//! ```
//!
//! `header_bytes` counts the whole first line including the newline; the line
//! is padded with spaces so the body starts on an 8-byte boundary. Fields are
//! stored in header order (`rho`, `u`, `b`), components in order, and inside a
//! component the first spatial axis varies fastest. `body_bytes` and the
//! SHA-256 of the body guard against truncation and corruption.

use std::io::Write;
use std::path::{Path, PathBuf};

use mhd_core::mhd::{PhysParams, State};
use mhd_core::spectral::{Grid, RealField};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Longest header line a reader accepts.
const MAX_HEADER_BYTES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed checkpoint header: {0}")]
    MalformedHeader(String),

    #[error("checkpoint schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u32 },

    #[error("checkpoint body is truncated: expected {expected} bytes, found {found}")]
    TruncatedBody { expected: usize, found: usize },

    #[error("checkpoint body has {extra} bytes beyond the declared length")]
    TrailingData { extra: usize },

    #[error("checkpoint body checksum mismatch: header says {expected}, body hashes to {found}")]
    ChecksumMismatch { expected: String, found: String },

    #[error("checkpoint describes an invalid state: {0}")]
    InvalidState(mhd_core::Error),
}

impl CheckpointError {
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::Io { .. } => "checkpoint_io",
            CheckpointError::MalformedHeader(_) => "malformed_header",
            CheckpointError::VersionMismatch { .. } => "version_mismatch",
            CheckpointError::TruncatedBody { .. } => "truncated_body",
            CheckpointError::TrailingData { .. } => "trailing_data",
            CheckpointError::ChecksumMismatch { .. } => "checksum_mismatch",
            CheckpointError::InvalidState(_) => "invalid_state",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEntry {
    pub name: String,
    pub components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub schema_version: u32,
    pub header_bytes: usize,
    pub dim: usize,
    pub points_per_axis: usize,
    pub period: f64,
    pub t: f64,
    pub params: PhysParams,
    pub fields: Vec<FieldEntry>,
    pub body_bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub state: State,
}

fn hex_digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Serializes a state into the checkpoint byte layout.
pub fn encode(state: &State, params: &PhysParams) -> Vec<u8> {
    let grid = state.grid();
    let fields = [("rho", &state.rho), ("u", &state.u), ("b", &state.b)];
    let mut body =
        Vec::with_capacity(8 * fields.iter().map(|(_, f)| f.data().len()).sum::<usize>());
    for (_, f) in &fields {
        for v in f.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut header = Header {
        schema_version: SCHEMA_VERSION,
        header_bytes: 0,
        dim: grid.dim(),
        points_per_axis: grid.points_per_axis(),
        period: grid.period(),
        t: state.t,
        params: *params,
        fields: fields
            .iter()
            .map(|(n, f)| FieldEntry {
                name: n.to_string(),
                components: f.components(),
            })
            .collect(),
        body_bytes: body.len(),
        sha256: hex_digest(&body),
    };
    // The declared length appears inside the line it measures; iterate until
    // it is consistent. Each pass can only grow the digit count, so this ends.
    let line = loop {
        let json = serde_json::to_string(&header).expect("header serializes");
        let total = (json.len() + 1).next_multiple_of(8);
        if total == header.header_bytes {
            let mut line = json.into_bytes();
            line.resize(total - 1, b' ');
            line.push(b'\n');
            break line;
        }
        header.header_bytes = total;
    };
    let mut out = line;
    out.extend_from_slice(&body);
    out
}

/// Parses and validates checkpoint bytes.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let window = &bytes[..bytes.len().min(MAX_HEADER_BYTES)];
    let newline = window.iter().position(|&b| b == b'\n').ok_or_else(|| {
        CheckpointError::MalformedHeader("no newline-terminated header line".into())
    })?;
    let text = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| CheckpointError::MalformedHeader("header is not UTF-8".into()))?;
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| CheckpointError::MalformedHeader("missing schema_version".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let header: Header = serde_json::from_value(value)
        .map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;
    if header.header_bytes != newline + 1 {
        return Err(CheckpointError::MalformedHeader(format!(
            "header_bytes is {} but the header line has {} bytes",
            header.header_bytes,
            newline + 1
        )));
    }
    let grid = Grid::new(header.dim, header.points_per_axis, header.period)
        .map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;
    let expected_fields = [("rho", 1), ("u", header.dim), ("b", header.dim)];
    let layout_ok = header.fields.len() == 3
        && header
            .fields
            .iter()
            .zip(expected_fields)
            .all(|(f, (n, c))| f.name == n && f.components == c);
    if !layout_ok {
        return Err(CheckpointError::MalformedHeader(format!(
            "unexpected field layout {:?}",
            header.fields
        )));
    }
    let samples = (1 + 2 * header.dim) * grid.len();
    if header.body_bytes != 8 * samples {
        return Err(CheckpointError::MalformedHeader(format!(
            "body_bytes {} does not match {} samples",
            header.body_bytes, samples
        )));
    }
    let body = &bytes[newline + 1..];
    if body.len() < header.body_bytes {
        return Err(CheckpointError::TruncatedBody {
            expected: header.body_bytes,
            found: body.len(),
        });
    }
    if body.len() > header.body_bytes {
        return Err(CheckpointError::TrailingData {
            extra: body.len() - header.body_bytes,
        });
    }
    let digest = hex_digest(body);
    if digest != header.sha256 {
        return Err(CheckpointError::ChecksumMismatch {
            expected: header.sha256.clone(),
            found: digest,
        });
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let n = grid.len();
    let field = |start: usize, comps: usize| {
        RealField::from_vec(grid, comps, values[start * n..(start + comps) * n].to_vec())
            .map_err(CheckpointError::InvalidState)
    };
    let rho = field(0, 1)?;
    let u = field(1, header.dim)?;
    let b = field(1 + header.dim, header.dim)?;
    let state = State::new(header.t, rho, u, b).map_err(CheckpointError::InvalidState)?;
    Ok(Checkpoint { header, state })
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn write(path: &Path, state: &State, params: &PhysParams) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("partial");
    let mut file = std::fs::File::create(&tmp).map_err(io)?;
    file.write_all(&encode(state, params)).map_err(io)?;
    file.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn read(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
