//! Simulation configuration: one point in the benchmark factor space.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Supported virtual developer counts.
pub const DEVELOPER_AXIS: [u32; 14] =
    [1, 2, 5, 10, 20, 30, 50, 75, 100, 150, 200, 300, 400, 500];

/// Supported GPU counts.
pub const GPU_AXIS: [u32; 3] = [1, 2, 4];

/// How the replay client consumes generations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamingMode {
    /// Stream tokens; a newer request from the same developer cancels the
    /// one still in flight, so at most one request per developer runs.
    StreamWithCancel,
    /// Wait for the full response; nothing is ever canceled client-side.
    NoStream,
}

impl StreamingMode {
    pub const ALL: [StreamingMode; 2] = [StreamingMode::StreamWithCancel, StreamingMode::NoStream];

    pub fn name(self) -> &'static str {
        match self {
            StreamingMode::StreamWithCancel => "stream_with_cancel",
            StreamingMode::NoStream => "no_stream",
        }
    }
}

/// Which trace requests are replayed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerMode {
    /// Replay every recorded request.
    Automatic,
    /// Replay only requests that finished and were displayed, approximating
    /// a developer who invokes the assistant deliberately.
    ManualEmulated,
}

impl TriggerMode {
    pub const ALL: [TriggerMode; 2] = [TriggerMode::Automatic, TriggerMode::ManualEmulated];

    pub fn name(self) -> &'static str {
        match self {
            TriggerMode::Automatic => "automatic",
            TriggerMode::ManualEmulated => "manual_emulated",
        }
    }
}

/// One point in the factor space.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub developers: u32,
    pub streaming: StreamingMode,
    pub trigger: TriggerMode,
    pub model_profile: String,
    /// Quantization tag declared by the model profile; "none" for full weights.
    pub quantization_tag: String,
    /// Admission cap counting queued plus running requests.
    pub max_concurrent_requests: u32,
    pub gpu_count: u32,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            developers: 1,
            streaming: StreamingMode::NoStream,
            trigger: TriggerMode::Automatic,
            model_profile: "sc2-7b".to_string(),
            quantization_tag: "none".to_string(),
            max_concurrent_requests: 1_000,
            gpu_count: 1,
        }
    }
}

impl SimulationConfig {
    /// Checks numeric fields against the declared axis domains. Profile and
    /// quantization names are checked later against the loaded profiles.
    pub fn validate(&self) -> Result<()> {
        if !DEVELOPER_AXIS.contains(&self.developers) {
            return Err(Error::InvalidConfig(format!(
                "developers must be one of {DEVELOPER_AXIS:?}, got {}",
                self.developers
            )));
        }
        if !GPU_AXIS.contains(&self.gpu_count) {
            return Err(Error::InvalidConfig(format!(
                "gpu_count must be one of {GPU_AXIS:?}, got {}",
                self.gpu_count
            )));
        }
        if self.max_concurrent_requests == 0 {
            return Err(Error::InvalidConfig(
                "max_concurrent_requests must be at least 1".to_string(),
            ));
        }
        if self.model_profile.is_empty() {
            return Err(Error::InvalidConfig("model_profile must be set".to_string()));
        }
        Ok(())
    }

    /// Stable content hash for dedup and store addressing (hex SHA-256 of the
    /// canonical JSON encoding; field order is fixed by the struct).
    pub fn stable_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write;
            write!(hex, "{byte:02x}").unwrap();
        }
        hex
    }

    /// Short human-readable label for logs and reports.
    pub fn label(&self) -> String {
        format!(
            "{}dev-{}-{}-{}-{}-mc{}-{}gpu",
            self.developers,
            self.model_profile,
            self.quantization_tag,
            self.streaming.name(),
            self.trigger.name(),
            self.max_concurrent_requests,
            self.gpu_count
        )
    }
}
