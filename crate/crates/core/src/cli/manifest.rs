use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::write_json_atomic;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Provenance record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub dataset_hash: Option<String>,
    /// Checkpoint name to SHA-256 of its file.
    pub checkpoints: BTreeMap<String, String>,
    pub tool_version: String,
    pub seed: u64,
    /// Unix time at which the command finished.
    pub finished_unix: u64,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: u64, started: Instant) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash,
            dataset_hash: None,
            checkpoints: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            finished_unix: 0,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        }
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        std::fs::create_dir_all(dir)?;
        write_json_atomic(&dir.join(RUN_MANIFEST_FILE), &self)
    }
}
