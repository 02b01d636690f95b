//! Run manifests and CSV output.
//!
//! Every command records a manifest next to its tables: the full effective
//! config, the seed, the version, and timing. Feeding a manifest back as a
//! config file replays the run, because config loading looks through the
//! manifest wrapper; everything except wall-clock time is then bit-identical.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    /// Unix time at which the run started, in seconds.
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    /// The full effective configuration, after flag overrides.
    pub config: serde_json::Value,
}

impl Manifest {
    /// Start a manifest for `command`; call [`Manifest::finished`] with the
    /// measured wall-clock time before saving.
    pub fn new(command: &str, seed: u64, threads: usize, config: serde_json::Value) -> Manifest {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads,
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_clock_secs: 0.0,
            config,
        }
    }

    pub fn finished(mut self, wall_clock_secs: f64) -> Manifest {
        self.wall_clock_secs = wall_clock_secs;
        self
    }
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn config_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Load a JSON config file as a raw value, along with the recorded command
/// name when the file turned out to be a manifest. A manifest is accepted in
/// place of a config: its `config` member is returned, so a recorded run can
/// be replayed from its own manifest.
pub fn load_config_tagged(
    path: impl AsRef<Path>,
) -> Result<(Option<String>, serde_json::Value)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| config_error(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| config_error(path, e))?;
    match value {
        serde_json::Value::Object(mut map)
            if map.contains_key("command") && map.contains_key("config") =>
        {
            let command = map.get("command").and_then(|c| c.as_str()).map(String::from);
            Ok((command, map.remove("config").expect("presence just checked")))
        }
        other => Ok((None, other)),
    }
}

/// [`load_config_tagged`] without the command tag.
pub fn load_config_value(path: impl AsRef<Path>) -> Result<serde_json::Value> {
    load_config_tagged(path).map(|(_, value)| value)
}

/// [`load_config_value`] deserialized into a concrete config type.
pub fn load_config<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let value = load_config_value(path)?;
    serde_json::from_value(value).map_err(|e| config_error(path, e))
}

/// Write rows as an RFC 4180 CSV, header derived from the row type's field
/// names. Optional fields serialize as empty cells; floats use the shortest
/// round-trip form.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct DemoRow {
        name: String,
        value: Option<f64>,
        count: usize,
    }

    #[test]
    fn manifest_round_trips_and_replays_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let config = json!({"frequency": 2.5, "labels": ["a", "b"]});
        let manifest = Manifest::new("sweep-toy", 7, 4, config.clone()).finished(12.5);
        save_manifest(&path, &manifest).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let reloaded: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(reloaded, manifest);
        assert_eq!(reloaded.version, env!("CARGO_PKG_VERSION"));

        // The manifest doubles as a config file.
        assert_eq!(load_config_value(&path).unwrap(), config);
    }

    #[test]
    fn plain_configs_load_unwrapped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"command": "kept", "value": 3}"#).unwrap();
        // `command` alone does not make it a manifest.
        let value = load_config_value(&path).unwrap();
        assert_eq!(value["command"], "kept");

        std::fs::write(&path, "{not json").unwrap();
        let err = load_config_value(&path).unwrap_err().to_string();
        assert!(err.contains("config.json"), "{err}");
    }

    #[test]
    fn typed_loading_reports_the_offending_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("row.json");
        std::fs::write(&path, r#"{"name": "x", "value": 1.0, "count": -3}"#).unwrap();
        let err = load_config::<DemoRow>(&path).unwrap_err().to_string();
        assert!(err.contains("row.json"), "{err}");

        std::fs::write(&path, r#"{"name": "x", "value": null, "count": 3}"#).unwrap();
        let row: DemoRow = load_config(&path).unwrap();
        assert_eq!(row.value, None);
    }

    #[test]
    fn csv_quotes_and_empties_follow_the_rules() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let rows = vec![
            DemoRow {
                name: "plain".into(),
                value: Some(0.1),
                count: 1,
            },
            DemoRow {
                name: "comma, quote \" inside".into(),
                value: None,
                count: 2,
            },
        ];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "name,value,count");
        assert_eq!(lines[1], "plain,0.1,1");
        // RFC 4180: embedded quotes double, the field is quoted.
        assert_eq!(lines[2], "\"comma, quote \"\" inside\",,2");

        let mut reader = csv::Reader::from_path(&path).unwrap();
        let back: Vec<DemoRow> = reader.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(back, rows);
    }
}
