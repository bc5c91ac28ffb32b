//! Model profiles and server parameters for the batching simulator.
//!
//! Profiles stand in for real models: per-step decode costs, prompt prefill
//! cost, and typical output length, plus quantization tags that scale cost
//! and power. Hardware parameters cover idle/active power and step timing.
//! Both ship in a versioned TOML file; `builtin()` returns the calibrated
//! defaults compiled into the binary.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SimulationConfig;
use crate::error::{Error, Result};

/// Cost/power scaling for one quantization method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizationSpec {
    /// Multiplies prefill and decode step costs.
    pub latency_multiplier: f64,
    /// Multiplies the active (utilization-driven) power term.
    pub power_multiplier: f64,
}

impl QuantizationSpec {
    pub const IDENTITY: QuantizationSpec =
        QuantizationSpec { latency_multiplier: 1.0, power_multiplier: 1.0 };
}

/// Cost model of one served model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    /// Entry-step surcharge per 1000 prompt tokens.
    pub prefill_ms_per_1k_tokens: f64,
    /// Fixed cost of one batching step.
    pub decode_base_ms: f64,
    /// Additional step cost per concurrent sequence.
    pub decode_slope_ms: f64,
    /// Center of the seeded output-length draw when the trace has no count.
    pub mean_output_tokens: f64,
    /// Half-width of the output-length draw as a fraction of the mean.
    pub output_jitter: f64,
    /// Sequences one GPU can hold; running capacity scales with gpu_count.
    pub batch_capacity_per_gpu: u32,
    #[serde(default)]
    pub quantization: BTreeMap<String, QuantizationSpec>,
}

impl ModelProfile {
    fn validate(&self, name: &str) -> Result<()> {
        let positive = [
            ("prefill_ms_per_1k_tokens", self.prefill_ms_per_1k_tokens),
            ("decode_base_ms", self.decode_base_ms),
            ("decode_slope_ms", self.decode_slope_ms),
            ("mean_output_tokens", self.mean_output_tokens),
        ];
        for (field, value) in positive {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "profile {name}: {field} must be > 0, got {value}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.output_jitter) {
            return Err(Error::InvalidConfig(format!(
                "profile {name}: output_jitter must be in [0, 1), got {}",
                self.output_jitter
            )));
        }
        if self.batch_capacity_per_gpu == 0 {
            return Err(Error::InvalidConfig(format!(
                "profile {name}: batch_capacity_per_gpu must be at least 1"
            )));
        }
        for (tag, q) in &self.quantization {
            let ok = |m: f64| m.is_finite() && m > 0.0;
            if !ok(q.latency_multiplier) || !ok(q.power_multiplier) {
                return Err(Error::InvalidConfig(format!(
                    "profile {name}: quantization {tag}: multipliers must be > 0"
                )));
            }
        }
        Ok(())
    }

    /// Multipliers for a tag; "none" is always the identity.
    pub fn resolve_quantization(&self, profile: &str, tag: &str) -> Result<QuantizationSpec> {
        if tag == "none" {
            return Ok(QuantizationSpec::IDENTITY);
        }
        self.quantization.get(tag).copied().ok_or_else(|| Error::UnknownQuantization {
            profile: profile.to_string(),
            tag: tag.to_string(),
        })
    }
}

/// Host and GPU power/timing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareParams {
    pub cpu_idle_watts: f64,
    /// Idle draw of one GPU; unused GPUs count as nonexistent.
    pub gpu_idle_watts: f64,
    /// Peak extra draw of one fully utilized GPU.
    pub per_gpu_active_watts: f64,
    /// Lower bound on batching step duration.
    pub step_quantum_ms: f64,
    /// Power sampling cadence for the simulated meter.
    pub sample_interval_ms: u64,
}

impl HardwareParams {
    fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("cpu_idle_watts", self.cpu_idle_watts),
            ("gpu_idle_watts", self.gpu_idle_watts),
            ("per_gpu_active_watts", self.per_gpu_active_watts),
            ("step_quantum_ms", self.step_quantum_ms),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "hardware: {field} must be >= 0, got {value}"
                )));
            }
        }
        if self.sample_interval_ms == 0 {
            return Err(Error::InvalidConfig(
                "hardware: sample_interval_ms must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Versioned profiles file: hardware parameters plus named model profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilesFile {
    pub schema_version: u32,
    pub hardware: HardwareParams,
    pub profiles: BTreeMap<String, ModelProfile>,
}

pub const PROFILES_SCHEMA_VERSION: u32 = 1;

impl ProfilesFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ProfilesFile =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("profiles: {e}")))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("profiles serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != PROFILES_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "profiles: unsupported schema_version {} (expected {PROFILES_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.hardware.validate()?;
        if self.profiles.is_empty() {
            return Err(Error::InvalidConfig("profiles: no model profiles defined".to_string()));
        }
        for (name, profile) in &self.profiles {
            profile.validate(name)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ModelProfile> {
        self.profiles.get(name).ok_or_else(|| Error::UnknownProfile(name.to_string()))
    }

    /// Calibrated defaults compiled into the binary. `profiles/default.toml`
    /// in the repository carries the same values for external editing.
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_PROFILES_TOML).expect("builtin profiles are valid")
    }
}

/// Shipped defaults; see `profiles/default.toml` for the editable copy.
pub const BUILTIN_PROFILES_TOML: &str = include_str!("builtin_profiles.toml");

/// Fully resolved parameters the simulator runs with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSettings {
    pub model: String,
    pub quantization_tag: String,
    pub prefill_ms_per_1k_tokens: f64,
    pub decode_base_ms: f64,
    pub decode_slope_ms: f64,
    pub mean_output_tokens: f64,
    pub output_jitter: f64,
    /// Total sequences the batch can run: per-GPU capacity times GPU count.
    pub running_capacity: u32,
    pub max_concurrent_requests: u32,
    pub gpu_count: u32,
    pub idle_watts: f64,
    pub active_watts: f64,
    pub step_quantum_ms: f64,
    pub sample_interval_ms: u64,
    pub latency_multiplier: f64,
    pub power_multiplier: f64,
    pub seed: u64,
}

impl ServerSettings {
    /// Resolves a simulation config against a profiles file.
    pub fn resolve(
        profiles: &ProfilesFile,
        config: &SimulationConfig,
        seed: u64,
    ) -> Result<ServerSettings> {
        config.validate()?;
        profiles.validate()?;
        let profile = profiles.get(&config.model_profile)?;
        let quant = profile.resolve_quantization(&config.model_profile, &config.quantization_tag)?;
        let hw = &profiles.hardware;
        Ok(ServerSettings {
            model: config.model_profile.clone(),
            quantization_tag: config.quantization_tag.clone(),
            prefill_ms_per_1k_tokens: profile.prefill_ms_per_1k_tokens,
            decode_base_ms: profile.decode_base_ms,
            decode_slope_ms: profile.decode_slope_ms,
            mean_output_tokens: profile.mean_output_tokens,
            output_jitter: profile.output_jitter,
            running_capacity: profile.batch_capacity_per_gpu * config.gpu_count,
            max_concurrent_requests: config.max_concurrent_requests,
            gpu_count: config.gpu_count,
            idle_watts: hw.cpu_idle_watts + hw.gpu_idle_watts * config.gpu_count as f64,
            active_watts: hw.per_gpu_active_watts * config.gpu_count as f64,
            step_quantum_ms: hw.step_quantum_ms,
            sample_interval_ms: hw.sample_interval_ms,
            latency_multiplier: quant.latency_multiplier,
            power_multiplier: quant.power_multiplier,
            seed,
        })
    }

    /// Step duration for a batch of `batch_size` sequences, of which the
    /// entering ones carry `entering_prompt_tokens` prompt tokens total.
    pub fn step_duration_ms(&self, batch_size: u32, entering_prompt_tokens: u64) -> f64 {
        let decode = self.decode_base_ms + self.decode_slope_ms * batch_size as f64;
        let prefill = self.prefill_ms_per_1k_tokens * entering_prompt_tokens as f64 / 1_000.0;
        ((decode + prefill) * self.latency_multiplier).max(self.step_quantum_ms)
    }

    /// Instantaneous power for a running batch.
    pub fn power_watts(&self, batch_size: u32) -> f64 {
        let utilization =
            (batch_size as f64 / self.running_capacity as f64).clamp(0.0, 1.0);
        self.idle_watts + self.active_watts * utilization * self.power_multiplier
    }

    /// Deterministic output length for a prompt: a seeded draw around
    /// `mean_output_tokens`, capped by the request's `max_new_tokens`.
    pub fn output_tokens(&self, prompt: &str, max_new_tokens: u32) -> u32 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(prompt.as_bytes());
        let digest = hasher.finalize();
        let raw = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let unit = raw as f64 / u64::MAX as f64;
        let spread = 1.0 + self.output_jitter * (2.0 * unit - 1.0);
        let drawn = (self.mean_output_tokens * spread).round().max(1.0) as u32;
        drawn.min(max_new_tokens).max(1)
    }
}
