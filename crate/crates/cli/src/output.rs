//! Self-describing output directories: every run writes its resolved config,
//! an append-only JSON-lines metrics log, its artifacts and a manifest with
//! SHA-256 hashes of inputs and outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub run_id: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub struct RunDir {
    root: PathBuf,
    command: String,
    run_id: String,
    seed: Option<u64>,
    config_sha256: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
    metrics: BufWriter<File>,
}

impl RunDir {
    /// Creates `root` (and parents) and writes the resolved config into it.
    pub fn create(root: &Path, command: &str, config: &RunConfig, seed: Option<u64>) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let text = config.to_toml();
        let config_path = root.join(CONFIG_FILE);
        fs::write(&config_path, &text).map_err(|e| CliError::io(&config_path, e))?;
        let config_sha256 = sha256_hex(text.as_bytes());
        let run_id = match seed {
            Some(seed) => format!("{command}-seed{seed}-{}", &config_sha256[..8]),
            None => format!("{command}-{}", &config_sha256[..8]),
        };
        let metrics_path = root.join(METRICS_FILE);
        let metrics = File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            run_id,
            seed,
            config_sha256,
            inputs: Vec::new(),
            outputs: vec![CONFIG_FILE.into(), METRICS_FILE.into()],
            metrics: BufWriter::new(metrics),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Path of an artifact inside the run directory, registered for the manifest.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        self.root.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.artifact(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Appends one metrics record.
    pub fn metric(&mut self, stage: &str, step: usize, values: &[(&str, f64)]) -> Result<(), CliError> {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let metrics: Map<String, Value> = values.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
        let record = json!({
            "run_id": self.run_id,
            "stage": stage,
            "step": step,
            "metrics": metrics,
            "timestamp": timestamp,
        });
        writeln!(self.metrics, "{record}").map_err(|e| CliError::io(&self.root.join(METRICS_FILE), e))
    }

    /// Flushes the metrics log and writes the manifest.
    pub fn finish(mut self) -> Result<Manifest, CliError> {
        self.metrics
            .flush()
            .map_err(|e| CliError::io(&self.root.join(METRICS_FILE), e))?;
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                Ok(FileHash {
                    path: p.display().to_string(),
                    sha256: hash_file(p)?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let mut names = self.outputs.clone();
        names.sort();
        let outputs = names
            .iter()
            .map(|name| {
                Ok(FileHash {
                    path: name.clone(),
                    sha256: hash_file(&self.root.join(name))?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let manifest = Manifest {
            command: self.command.clone(),
            run_id: self.run_id.clone(),
            seed: self.seed,
            config_sha256: self.config_sha256.clone(),
            inputs,
            outputs,
        };
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_hashes_every_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(dir.path(), "demo", &RunConfig::default(), Some(4)).unwrap();
        run.write_text("table.csv", "a,b\n1,2\n").unwrap();
        run.metric("demo", 1, &[("loss", 0.5)]).unwrap();
        let manifest = run.finish().unwrap();
        let names: Vec<&str> = manifest.outputs.iter().map(|o| o.path.as_str()).collect();
        assert_eq!(names, [CONFIG_FILE, METRICS_FILE, "table.csv"]);
        assert_eq!(manifest.outputs[2].sha256, sha256_hex(b"a,b\n1,2\n"));
        assert!(manifest.run_id.starts_with("demo-seed4-"));
        let line = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let record: Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(record["metrics"]["loss"], json!(0.5));
        assert!(dir.path().join(MANIFEST_FILE).exists());
    }
}
