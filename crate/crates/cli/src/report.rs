use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const TOOL: &str = "sae-embed";

/// Envelope shared by every report file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report<T> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Value,
    pub result: T,
}

impl<T> Report<T> {
    pub fn new(command: &str, config: Value, result: T) -> Self {
        Self {
            tool: TOOL.into(),
            version: sae_embed::VERSION.into(),
            command: command.into(),
            config,
            result,
        }
    }
}

/// Run facts that change between identical runs. Kept out of the report so
/// reports stay byte-identical.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Meta {
    pub command: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub elapsed_s: f64,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub measurements: serde_json::Map<String, Value>,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("{}: {e}", dir.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| CliError::internal(format!("{}: {e}", path.display())))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| CliError::internal(format!("{}: {e}", path.display())))
}

/// Writes `<dir>/<command>.json` and its `.meta.json` sidecar.
pub fn write_report<T: Serialize>(dir: &Path, report: &Report<T>, mut meta: Meta) -> CliResult<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(format!("{}.json", report.command));
    write_json(&path, report)?;
    meta.command = report.command.clone();
    meta.finished_unix_s = unix_now();
    meta.elapsed_s = meta.finished_unix_s - meta.started_unix_s;
    write_json(&dir.join(format!("{}.meta.json", report.command)), &meta)?;
    Ok(path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Loads a report written by `command`.
pub fn read_report<T: DeserializeOwned>(path: &Path, command: &str) -> CliResult<Report<T>> {
    let r: Report<Value> = read_json(path)?;
    if r.command != command {
        return Err(CliError::input(format!(
            "{}: expected a {command} report, found {}",
            path.display(),
            r.command
        )));
    }
    let result = serde_json::from_value(r.result).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(Report {
        tool: r.tool,
        version: r.version,
        command: r.command,
        config: r.config,
        result,
    })
}
