//! `fsd.json` plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use fsd_core::dataset::{CorpusConfig, MixConfig};
use fsd_core::eval::EvalConfig;
use fsd_core::nn::TrainConfig;
use fsd_core::render::{CameraConfig, Weather};
use fsd_core::sim::{ExpertConfig, SimConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const DEFAULT_FILE: &str = "fsd.json";
pub const SEED_VAR: &str = "FSD_SEED";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationParams {
    pub seeds: Vec<u64>,
    /// Seeds of the unseen evaluation circuits.
    pub circuits: Vec<u64>,
    pub circuit_length: f64,
    pub cap_s: f64,
    pub samples: usize,
}

impl Default for AblationParams {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            circuits: vec![9001, 9002, 9003],
            circuit_length: 500.0,
            cap_s: 300.0,
            samples: 6000,
        }
    }
}

/// Lighting for closed-loop evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalLight {
    pub t_day: f64,
    pub weather: Weather,
}

impl Default for EvalLight {
    fn default() -> Self {
        let d = EvalConfig::default();
        Self {
            t_day: d.t_day,
            weather: d.weather,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub sim: SimConfig,
    pub cam: CameraConfig,
    pub expert: ExpertConfig,
    pub corpus: CorpusConfig,
    pub mix: MixConfig,
    pub train: TrainConfig,
    pub eval: EvalLight,
    pub ablation: AblationParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sim: SimConfig::default(),
            cam: CameraConfig::default(),
            expert: ExpertConfig::default(),
            corpus: CorpusConfig::default(),
            mix: MixConfig::default(),
            train: TrainConfig {
                lr: 1e-3,
                lr_final: Some(1e-5),
                epochs: 7,
                ..TrainConfig::default()
            },
            eval: EvalLight::default(),
            ablation: AblationParams::default(),
        }
    }
}

impl RunConfig {
    /// Evaluation settings; the scene is seeded with the run seed.
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            sim: self.sim.clone(),
            cam: self.cam.clone(),
            t_day: self.eval.t_day,
            weather: self.eval.weather,
            scene_seed: self.seed,
        }
    }
}

/// Parses `raw` as JSON, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `path` (dot separated) inside `root`, refusing unknown keys.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not key=value")))?;
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("{key}: {} is not a section", parts[..i].join("."))))?;
        let child = obj.get_mut(*part).ok_or_else(|| CliError::Usage(format!("unknown config key {key}")))?;
        if i + 1 == parts.len() {
            *child = parse_value(raw);
            return Ok(());
        }
        node = child;
    }
    Err(CliError::Usage(format!("empty config key in {assignment:?}")))
}

/// Defaults, then the config file, then overrides, then the seed. The seed
/// comes from `--seed`, else the file or an override, else `FSD_SEED`.
pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let default_path = PathBuf::from(DEFAULT_FILE);
    let path = match file {
        Some(p) => Some(p.to_path_buf()),
        None => default_path.exists().then_some(default_path),
    };
    let mut seed_given = false;
    if let Some(path) = path {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let from_file: Value = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        seed_given |= from_file.get("seed").is_some();
        merge(&mut value, from_file);
    }
    for o in overrides {
        apply_override(&mut value, o)?;
        seed_given |= o.split_once('=').is_some_and(|(k, _)| k == "seed");
    }
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    if let Some(s) = seed {
        cfg.seed = s;
    } else if !seed_given {
        if let Ok(raw) = std::env::var(SEED_VAR) {
            cfg.seed = raw
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_VAR}={raw:?} is not an unsigned integer")))?;
        }
    }
    Ok(cfg)
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        apply_override(&mut v, "sim.v_max=4.86").unwrap();
        apply_override(&mut v, "ablation.seeds=[4,5]").unwrap();
        let cfg: RunConfig = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(cfg.sim.v_max, 4.86);
        assert_eq!(cfg.ablation.seeds, vec![4, 5]);
        assert!(apply_override(&mut v, "sim.nope=1").is_err());
        assert!(apply_override(&mut v, "sim").is_err());
    }

    #[test]
    fn file_values_merge_over_defaults() {
        let mut base = serde_json::json!({"a": {"b": 1, "c": 2}, "d": 3});
        merge(&mut base, serde_json::json!({"a": {"c": 5}}));
        assert_eq!(base, serde_json::json!({"a": {"b": 1, "c": 5}, "d": 3}));
    }
}
