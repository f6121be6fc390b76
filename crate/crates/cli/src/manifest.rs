//! Run manifests: every output gets a sibling JSON describing how it was
//! produced, written atomically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::errors::CliError;

#[derive(Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            wall_time_secs: 0.0,
        }
    }

    pub fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_string(), path.display().to_string());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn config<T: Serialize>(mut self, cfg: &T) -> Self {
        self.config = serde_json::to_value(cfg).expect("config serializes");
        self
    }

    /// Write next to `primary_output` (or inside it when it is a
    /// directory), via a temp file and rename.
    pub fn write_next_to(
        mut self,
        primary_output: &Path,
        started: std::time::Instant,
    ) -> Result<(), CliError> {
        self.wall_time_secs = started.elapsed().as_secs_f64();
        let manifest_path: PathBuf = if primary_output.is_dir() {
            primary_output.join("manifest.json")
        } else {
            let mut name = primary_output
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "output".to_string());
            name.push_str(".manifest.json");
            primary_output.with_file_name(name)
        };
        let body = serde_json::to_string_pretty(&self).expect("manifest serializes");
        let tmp = manifest_path.with_extension("json.tmp");
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &manifest_path)?;
        Ok(())
    }
}
