//! JSON run configuration with dotted-key overrides.
//!
//! Loading starts from the file (or an empty object), applies overrides,
//! then lays the result over the defaults of the selected system. Unknown
//! keys anywhere are rejected.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mpcnet_core::solver::SolverConfig;
use mpcnet_core::systems::{build_system, BarrierConfig, Problem, SystemId, SystemModel, SystemParams};
use mpcnet_core::trainer::TrainerConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

pub const EFFECTIVE_CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemId,
    pub params: SystemParams,
    pub barrier: BarrierConfig,
    pub solver: SolverConfig,
    pub trainer: TrainerConfig,
    /// One training run per seed; each overrides `trainer.seed`.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn defaults(system: SystemId) -> Self {
        let params = SystemParams::default();
        let solver = SolverConfig::for_system(build_system(system, &params).as_ref());
        Self {
            system,
            params,
            barrier: BarrierConfig::default(),
            solver,
            trainer: TrainerConfig::default(),
            seeds: vec![0],
            out_dir: PathBuf::from("runs"),
        }
    }

    /// Reads `path` (or starts empty), applies `key=value` overrides and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut raw = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::usage(format!("config {} is not valid JSON: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        if !raw.is_object() {
            return Err(CliError::usage("config must be a JSON object"));
        }
        for o in overrides {
            apply_override(&mut raw, o)?;
        }
        Self::from_value(raw)
    }

    pub fn from_value(raw: Value) -> Result<Self, CliError> {
        let system = match raw.get("system") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::usage(format!("system: {e}")))?,
            None => SystemId::Hopper1d,
        };
        let mut merged = serde_json::to_value(Self::defaults(system)).expect("defaults serialize");
        merge(&mut merged, raw);
        let config: Self = serde_json::from_value(merged).map_err(|e| CliError::usage(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: mpcnet_core::Error| CliError::usage(e.to_string());
        self.solver.validate().map_err(usage)?;
        self.trainer.validate().map_err(usage)?;
        self.barrier.validate().map_err(usage)?;
        if self.seeds.is_empty() {
            return Err(CliError::usage("seeds must not be empty"));
        }
        Ok(())
    }

    pub fn system_model(&self) -> Arc<dyn SystemModel> {
        build_system(self.system, &self.params)
    }

    pub fn problem(&self) -> Problem {
        Problem::new(self.system_model()).with_barrier(self.barrier)
    }

    /// Trainer settings for one seed of the sweep.
    pub fn trainer_for_seed(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            seed,
            ..self.trainer.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Writes the effective configuration to `dir/config.json`.
    pub fn echo_to(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(EFFECTIVE_CONFIG_FILE);
        fs::write(&path, self.to_json())?;
        Ok(path)
    }
}

/// Sets `a.b.c=value` in `raw`, creating intermediate objects. The value is
/// parsed as JSON when possible and taken as a string otherwise.
pub fn apply_override(raw: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, text) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override `{assignment}` is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::usage(format!("override key `{key}` is malformed")));
    }
    let value = serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()));
    let mut node = raw;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::usage(format!("override `{key}`: `{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        node = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
    }
    unreachable!("loop returns on the last key")
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
