//! `run.json` and the echoed effective config in every run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::CliError;

pub const RUN_RECORD: &str = "run.json";
pub const EFFECTIVE_CONFIG: &str = "config.toml";

#[derive(Serialize)]
pub struct RunRecord {
    pub command: String,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub git_describe: &'static str,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: String,
    /// Command-specific results, filled in when the run ends.
    pub summary: serde_json::Value,
    #[serde(skip)]
    dir: PathBuf,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunRecord {
    /// Writes the effective config, echoes it, and records the start.
    pub fn start(command: &str, dir: &Path, config_toml: Option<&str>) -> Result<Self, CliError> {
        if let Some(text) = config_toml {
            println!("effective config ({}):\n{text}", dir.join(EFFECTIVE_CONFIG).display());
            fs::write(dir.join(EFFECTIVE_CONFIG), text)?;
        }
        let r = RunRecord {
            command: command.into(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            git_describe: env!("CPCD_GIT_DESCRIBE"),
            started_unix: now(),
            finished_unix: None,
            status: "running".into(),
            summary: serde_json::Value::Null,
            dir: dir.to_path_buf(),
        };
        r.write()?;
        Ok(r)
    }

    fn write(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(self.dir.join(RUN_RECORD), text + "\n")?;
        Ok(())
    }

    pub fn finish(mut self, summary: serde_json::Value) -> Result<(), CliError> {
        self.finished_unix = Some(now());
        self.status = "ok".into();
        self.summary = summary;
        self.write()
    }

    pub fn fail(mut self, err: CliError) -> CliError {
        self.finished_unix = Some(now());
        self.status = err.to_string();
        let _ = self.write();
        err
    }
}
