//! Content-addressed, crash-safe result store.
//!
//! Every configuration owns one directory named by its label and content
//! hash; every replicate stores its raw round logs plus the reduced metrics.
//! Files land via tmp-then-rename, and `metrics.json` is written last, so
//! its presence marks the replicate complete: a killed sweep resumes by
//! skipping exactly the complete replicates.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::SimulationConfig;
use crate::engine::virtual_clock::RoundExecution;
use crate::error::{Error, Result};
use crate::metrics::SimulationMetrics;

use super::space::ConfigSpace;

const ROUNDS_FILE: &str = "rounds.json";
const METRICS_FILE: &str = "metrics.json";
const CONFIG_FILE: &str = "config.json";
const MANIFEST_FILE: &str = "manifest.json";

/// Sweep-level parameters, pinned when the sweep first runs so a resumed
/// sweep cannot silently run with different inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub version: u32,
    pub base_seed: u64,
    pub window_ms: u64,
    pub space: ConfigSpace,
}

/// Writes `bytes` to `path` atomically: a unique temporary sibling is
/// renamed over the target, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    // The temp name must be unique per call, not just per process: parallel
    // sweep workers saving the same config's marker concurrently would
    // otherwise share one temp file and the second rename would fail.
    static TMP_SEQ: AtomicU64 = AtomicU64::new(0);
    let dir = path.parent().ok_or_else(|| Error::Store(format!("{path:?} has no parent")))?;
    fs::create_dir_all(dir).map_err(|e| Error::Store(format!("create {dir:?}: {e}")))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("file"),
        std::process::id(),
        TMP_SEQ.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::Store(format!("write {tmp:?}: {e}")))?;
    fs::rename(&tmp, path).map_err(|e| Error::Store(format!("rename to {path:?}: {e}")))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    write_atomic(path, &bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes =
        fs::read(path).map_err(|e| Error::Store(format!("read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format { path: path.display().to_string(), detail: e.to_string() })
}

/// On-disk store rooted at one directory.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<RunStore> {
        let root = root.into();
        fs::create_dir_all(root.join("runs"))
            .map_err(|e| Error::Store(format!("create store at {}: {e}", root.display())))?;
        Ok(RunStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_dir(&self, config: &SimulationConfig) -> PathBuf {
        let hash = config.stable_hash();
        self.root.join("runs").join(format!("{}-{}", config.label(), &hash[..16]))
    }

    pub fn replicate_dir(&self, config: &SimulationConfig, replicate: u32) -> PathBuf {
        self.config_dir(config).join(format!("rep_{replicate:03}"))
    }

    /// A replicate is complete exactly when its metrics file exists.
    pub fn is_complete(&self, config: &SimulationConfig, replicate: u32) -> bool {
        self.replicate_dir(config, replicate).join(METRICS_FILE).exists()
    }

    /// Persists one executed replicate; the metrics file lands last.
    pub fn save_replicate(
        &self,
        config: &SimulationConfig,
        replicate: u32,
        rounds: &[RoundExecution],
        metrics: &SimulationMetrics,
    ) -> Result<()> {
        let config_dir = self.config_dir(config);
        let config_path = config_dir.join(CONFIG_FILE);
        if !config_path.exists() {
            write_json(&config_path, config)?;
        }
        let rep_dir = self.replicate_dir(config, replicate);
        write_json(&rep_dir.join(ROUNDS_FILE), &rounds)?;
        write_json(&rep_dir.join(METRICS_FILE), metrics)?;
        Ok(())
    }

    pub fn load_metrics(
        &self,
        config: &SimulationConfig,
        replicate: u32,
    ) -> Result<SimulationMetrics> {
        read_json(&self.replicate_dir(config, replicate).join(METRICS_FILE))
    }

    pub fn load_rounds(
        &self,
        config: &SimulationConfig,
        replicate: u32,
    ) -> Result<Vec<RoundExecution>> {
        read_json(&self.replicate_dir(config, replicate).join(ROUNDS_FILE))
    }

    /// Replicate indices with complete results for a config, ascending.
    pub fn completed_replicates(&self, config: &SimulationConfig) -> Vec<u32> {
        let dir = self.config_dir(config);
        let Ok(entries) = fs::read_dir(&dir) else { return Vec::new() };
        let mut reps: Vec<u32> = entries
            .flatten()
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let rep: u32 = name.strip_prefix("rep_")?.parse().ok()?;
                e.path().join(METRICS_FILE).exists().then_some(rep)
            })
            .collect();
        reps.sort_unstable();
        reps
    }

    /// Every configuration that has a directory in the store, sorted by label.
    pub fn list_configs(&self) -> Result<Vec<SimulationConfig>> {
        let runs = self.root.join("runs");
        let entries =
            fs::read_dir(&runs).map_err(|e| Error::Store(format!("read {runs:?}: {e}")))?;
        let mut configs = Vec::new();
        for entry in entries.flatten() {
            let config_path = entry.path().join(CONFIG_FILE);
            if config_path.exists() {
                configs.push(read_json::<SimulationConfig>(&config_path)?);
            }
        }
        configs.sort_by_key(|c| c.label());
        Ok(configs)
    }

    /// Loads the complete replicate metrics of every stored configuration.
    pub fn collect_metrics(&self) -> Result<Vec<(SimulationConfig, Vec<SimulationMetrics>)>> {
        let mut out = Vec::new();
        for config in self.list_configs()? {
            let metrics: Vec<SimulationMetrics> = self
                .completed_replicates(&config)
                .into_iter()
                .map(|rep| self.load_metrics(&config, rep))
                .collect::<Result<_>>()?;
            if !metrics.is_empty() {
                out.push((config, metrics));
            }
        }
        Ok(out)
    }

    pub fn save_manifest(&self, manifest: &SweepManifest) -> Result<()> {
        write_json(&self.root.join(MANIFEST_FILE), manifest)
    }

    pub fn load_manifest(&self) -> Result<Option<SweepManifest>> {
        let path = self.root.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }
}
