//! Policy file: one JSON header line, a newline, then every parameter as a
//! little-endian `f64`.

use std::fs;
use std::path::Path;

use mpcnet_core::policy::{Architecture, Gating, Policy, PolicyDims};
use mpcnet_core::systems::SystemModel;
use serde::{Deserialize, Serialize};

use crate::error::FormatError;

pub const POLICY_FORMAT: &str = "mpcnet-policy";
pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyHeader {
    pub format: String,
    pub version: u32,
    pub arch: Architecture,
    pub gating: Gating,
    pub activation: String,
    pub dims: PolicyDims,
    pub n_experts: usize,
    pub n_params: usize,
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
}

pub fn encode(policy: &Policy) -> Vec<u8> {
    let header = PolicyHeader {
        format: POLICY_FORMAT.to_string(),
        version: POLICY_VERSION,
        arch: policy.arch,
        gating: policy.gating,
        activation: "tanh".to_string(),
        dims: policy.dims,
        n_experts: policy.n_heads(),
        n_params: policy.num_parameters(),
        input_offset: policy.input_offset.clone(),
        input_scale: policy.input_scale.clone(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend(policy.theta().iter().flat_map(|w| w.to_le_bytes()));
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Policy, FormatError> {
    let (header, blob) = split_header(bytes, path)?;
    let header: PolicyHeader = serde_json::from_slice(header).map_err(|source| FormatError::Header {
        path: path.to_path_buf(),
        source,
    })?;
    check_kind(path, &header.format, POLICY_FORMAT, header.version, POLICY_VERSION)?;
    let schema = |msg: String| FormatError::Schema {
        path: path.to_path_buf(),
        msg,
    };
    if header.activation != "tanh" {
        return Err(schema(format!("unsupported activation `{}`", header.activation)));
    }
    let theta = read_f64s(blob, header.n_params, path)?;
    let policy = Policy::from_parts(
        header.arch,
        header.gating,
        header.dims,
        header.input_offset,
        header.input_scale,
        theta,
    )
    .map_err(|e| schema(e.to_string()))?;
    if policy.n_heads() != header.n_experts {
        return Err(schema(format!(
            "header lists {} experts, architecture implies {}",
            header.n_experts,
            policy.n_heads()
        )));
    }
    Ok(policy)
}

pub fn save(path: &Path, policy: &Policy) -> Result<(), FormatError> {
    fs::write(path, encode(policy)).map_err(|e| FormatError::io(path, e))
}

pub fn load(path: &Path) -> Result<Policy, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode(&bytes, path)
}

/// Rejects a policy whose input or output sizes do not fit `system`.
pub fn check_against(policy: &Policy, system: &dyn SystemModel, path: &Path) -> Result<(), FormatError> {
    let d: PolicyDims = policy.dims;
    let expected = (system.phase_dim(), system.state_dim(), system.control_dim());
    let got = (d.phase_dim, d.state_dim, d.control_dim);
    if expected != got {
        return Err(FormatError::Schema {
            path: path.to_path_buf(),
            msg: format!(
                "policy (phase, state, control) dims {got:?} do not match system `{}` {expected:?}",
                system.name()
            ),
        });
    }
    Ok(())
}

pub(crate) fn split_header<'a>(bytes: &'a [u8], path: &Path) -> Result<(&'a [u8], &'a [u8]), FormatError> {
    let nl = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| FormatError::Schema {
        path: path.to_path_buf(),
        msg: "missing header line".to_string(),
    })?;
    Ok((&bytes[..nl], &bytes[nl + 1..]))
}

pub(crate) fn check_kind(
    path: &Path,
    found: &str,
    expected: &'static str,
    version: u32,
    supported: u32,
) -> Result<(), FormatError> {
    if found != expected {
        return Err(FormatError::WrongKind {
            path: path.to_path_buf(),
            expected,
            found: found.to_string(),
        });
    }
    if version != supported {
        return Err(FormatError::Version {
            path: path.to_path_buf(),
            found: version,
            supported,
        });
    }
    Ok(())
}

pub(crate) fn read_f64s(blob: &[u8], count: usize, path: &Path) -> Result<Vec<f64>, FormatError> {
    let expected = count * 8;
    if blob.len() != expected {
        return Err(FormatError::Truncated {
            path: path.to_path_buf(),
            expected,
            got: blob.len(),
        });
    }
    Ok(blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
