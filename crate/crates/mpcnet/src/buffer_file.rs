//! Replay buffer snapshot: a JSON header line followed by one fixed-size
//! record of little-endian `f64`s per sample, oldest first.
//!
//! Record layout: `t, phase, x, dvdx, nu, u_mpc`.

use std::fs;
use std::path::Path;

use mpcnet_core::replay_buffer::{ReplayBuffer, Sample};
use mpcnet_core::Vector;
use serde::{Deserialize, Serialize};

use crate::error::FormatError;
use crate::policy_file::{check_kind, read_f64s, split_header};

pub const BUFFER_FORMAT: &str = "mpcnet-buffer";
pub const BUFFER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferHeader {
    pub format: String,
    pub version: u32,
    pub phase_dim: usize,
    pub state_dim: usize,
    pub multiplier_dim: usize,
    pub control_dim: usize,
    pub count: usize,
    pub capacity: usize,
    pub inserted: u64,
    pub rejected: u64,
}

impl BufferHeader {
    fn record_len(&self) -> usize {
        1 + self.phase_dim + 2 * self.state_dim + self.multiplier_dim + self.control_dim
    }
}

pub fn encode(buffer: &ReplayBuffer, path: &Path) -> Result<Vec<u8>, FormatError> {
    let dims = |s: &Sample| (s.phase.len(), s.x.len(), s.nu.len(), s.u_mpc.len());
    let (phase_dim, state_dim, multiplier_dim, control_dim) = buffer.iter().next().map(dims).unwrap_or_default();
    if let Some(bad) = buffer
        .iter()
        .find(|s| dims(s) != (phase_dim, state_dim, multiplier_dim, control_dim) || s.dvdx.len() != state_dim)
    {
        return Err(FormatError::Schema {
            path: path.to_path_buf(),
            msg: format!("sample at t={} has different dimensions than the first sample", bad.t),
        });
    }
    let header = BufferHeader {
        format: BUFFER_FORMAT.to_string(),
        version: BUFFER_VERSION,
        phase_dim,
        state_dim,
        multiplier_dim,
        control_dim,
        count: buffer.len(),
        capacity: buffer.capacity(),
        inserted: buffer.inserted(),
        rejected: buffer.rejected(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(header.count * header.record_len() * 8);
    for s in buffer.iter() {
        let fields = std::iter::once(&s.t)
            .chain(s.phase.iter())
            .chain(s.x.iter())
            .chain(s.dvdx.iter())
            .chain(s.nu.iter())
            .chain(s.u_mpc.iter());
        for v in fields {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Restores a snapshot. `capacity` replaces the stored capacity, keeping the
/// newest samples when it is smaller.
pub fn decode(bytes: &[u8], path: &Path, capacity: Option<usize>) -> Result<ReplayBuffer, FormatError> {
    let (header, blob) = split_header(bytes, path)?;
    let header: BufferHeader = serde_json::from_slice(header).map_err(|source| FormatError::Header {
        path: path.to_path_buf(),
        source,
    })?;
    check_kind(path, &header.format, BUFFER_FORMAT, header.version, BUFFER_VERSION)?;
    let len = header.record_len();
    let values = read_f64s(blob, header.count * len, path)?;
    let mut buffer = ReplayBuffer::new(capacity.unwrap_or(header.capacity)).map_err(|e| FormatError::Schema {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    for rec in values.chunks_exact(len) {
        let mut rest = &rec[1..];
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Vector::from_column_slice(head)
        };
        let sample = Sample {
            t: rec[0],
            phase: take(header.phase_dim),
            x: take(header.state_dim),
            dvdx: take(header.state_dim),
            nu: take(header.multiplier_dim),
            u_mpc: take(header.control_dim),
        };
        if !buffer.append(sample) {
            return Err(FormatError::Schema {
                path: path.to_path_buf(),
                msg: format!("non-finite sample at t={}", rec[0]),
            });
        }
    }
    buffer.set_counters(header.inserted, header.rejected);
    Ok(buffer)
}

pub fn save(path: &Path, buffer: &ReplayBuffer) -> Result<(), FormatError> {
    let bytes = encode(buffer, path)?;
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e))
}

pub fn load(path: &Path, capacity: Option<usize>) -> Result<ReplayBuffer, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode(&bytes, path, capacity)
}
