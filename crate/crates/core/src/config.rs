//! Run configuration: one JSON document plus `key.path=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dqn::{MaskTrainConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::harness::EvalConfig;
use crate::maskheur::HeuristicConfig;
use crate::net::HourglassConfig;
use crate::reward::RewardConfig;
use crate::world::WorkspaceConfig;

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Inclusive object-count range for sampled scenes.
    pub objects: (usize, usize),
    pub pushes_per_scene: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { objects: (1, 10), pushes_per_scene: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub workspace: WorkspaceConfig,
    pub heuristic: HeuristicConfig,
    pub reward: RewardConfig,
    pub mask_net: HourglassConfig,
    pub reward_net: HourglassConfig,
    pub mask_training: MaskTrainConfig,
    pub training: TrainConfig,
    pub eval: EvalConfig,
    pub data: DataConfig,
    /// Seed for network initialization.
    pub init_seed: u64,
}

impl RunConfig {
    /// Defaults with every resolution-dependent value derived from `ws`.
    pub fn for_workspace(ws: WorkspaceConfig) -> Self {
        Self {
            heuristic: HeuristicConfig::for_workspace(&ws),
            reward: RewardConfig::for_resolution(ws.resolution),
            mask_net: HourglassConfig::pushmask(),
            reward_net: HourglassConfig::pushreward(),
            mask_training: MaskTrainConfig::default(),
            training: TrainConfig::default(),
            eval: EvalConfig::default(),
            data: DataConfig::default(),
            init_seed: 0,
            workspace: ws,
        }
    }

    /// Builds a config from an optional JSON document and overrides. Sections
    /// and fields left out take defaults derived from the final workspace.
    pub fn resolve(doc: Option<Value>, overrides: &[String]) -> Result<Self> {
        let mut user = doc.unwrap_or_else(|| Value::Object(Default::default()));
        if !user.is_object() {
            return Err(Error::Config("config document must be a JSON object".into()));
        }
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let mut ws_value = serde_json::to_value(WorkspaceConfig::default())?;
        if let Some(w) = user.get("workspace") {
            merge(&mut ws_value, w);
        }
        let ws: WorkspaceConfig =
            serde_json::from_value(ws_value).map_err(|e| Error::Config(format!("workspace: {e}")))?;
        let mut full = serde_json::to_value(Self::for_workspace(ws))?;
        merge(&mut full, &user);
        let cfg: RunConfig = serde_json::from_value(full).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                Some(serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?)
            }
            None => None,
        };
        Self::resolve(doc, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.workspace.validate()?;
        self.heuristic.validate()?;
        self.training.validate()?;
        for (name, net) in [("mask_net", &self.mask_net), ("reward_net", &self.reward_net)] {
            let prefix = |e: Error| match e {
                Error::Config(m) => Error::Config(format!("{name}: {m}")),
                other => other,
            };
            net.validate().map_err(prefix)?;
            net.validate_resolution(self.workspace.resolution).map_err(prefix)?;
            if net.out_channels != self.workspace.n_orientations {
                return Err(Error::Config(format!(
                    "{name}.out_channels {} != workspace.n_orientations {}",
                    net.out_channels, self.workspace.n_orientations
                )));
            }
        }
        let (lo, hi) = self.data.objects;
        if lo == 0 || lo > hi || hi > 10 {
            return Err(Error::Config("data.objects must be a range inside 1..=10".into()));
        }
        if !(1..=10).contains(&self.eval.n_objects) {
            return Err(Error::Config("eval.n_objects must lie in 1..=10".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Recursively overlays `src` onto `dst`; objects merge, everything else
/// replaces.
pub fn merge(dst: &mut Value, src: &Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                match d.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        d.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (d, s) => *d = s.clone(),
    }
}

/// Applies `a.b.c=value`; the value is parsed as JSON, or taken as a string.
pub fn apply_override(doc: &mut Value, text: &str) -> Result<()> {
    let (path, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not key=value")))?;
    if path.is_empty() {
        return Err(Error::Config(format!("override `{text}` has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, k) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{}` is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(k.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!()
}
