use std::fs;
use std::path::Path;

use serde::Deserialize;
use zoorank::synth::ZooConfig;
use zoorank::training::TrainConfig;

use crate::commands::Failure;

/// Contents of a `--config` file. Either section may be omitted.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub zoo: ZooConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        // serde_json reports "at line L column C".
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }
}
