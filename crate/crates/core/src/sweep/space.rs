//! Factor space definition and enumeration.

use serde::{Deserialize, Serialize};

use crate::config::{SimulationConfig, StreamingMode, TriggerMode};
use crate::error::{Error, Result};

fn default_developers() -> Vec<u32> {
    vec![SimulationConfig::default().developers]
}
fn default_streaming() -> Vec<StreamingMode> {
    vec![SimulationConfig::default().streaming]
}
fn default_trigger() -> Vec<TriggerMode> {
    vec![SimulationConfig::default().trigger]
}
fn default_model_profile() -> Vec<String> {
    vec![SimulationConfig::default().model_profile]
}
fn default_quantization() -> Vec<String> {
    vec![SimulationConfig::default().quantization_tag]
}
fn default_max_concurrent() -> Vec<u32> {
    vec![SimulationConfig::default().max_concurrent_requests]
}
fn default_gpu_count() -> Vec<u32> {
    vec![SimulationConfig::default().gpu_count]
}

/// One value list per factor; the sweep runs their cartesian product.
/// Omitted axes default to the single default value of the factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSpace {
    #[serde(default = "default_developers")]
    pub developers: Vec<u32>,
    #[serde(default = "default_streaming")]
    pub streaming: Vec<StreamingMode>,
    #[serde(default = "default_trigger")]
    pub trigger: Vec<TriggerMode>,
    #[serde(default = "default_model_profile")]
    pub model_profile: Vec<String>,
    #[serde(default = "default_quantization")]
    pub quantization: Vec<String>,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent_requests: Vec<u32>,
    #[serde(default = "default_gpu_count")]
    pub gpu_count: Vec<u32>,
}

impl Default for ConfigSpace {
    fn default() -> Self {
        ConfigSpace {
            developers: default_developers(),
            streaming: default_streaming(),
            trigger: default_trigger(),
            model_profile: default_model_profile(),
            quantization: default_quantization(),
            max_concurrent_requests: default_max_concurrent(),
            gpu_count: default_gpu_count(),
        }
    }
}

fn dedup_in_order<T: PartialEq + Clone>(values: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(values.len());
    for v in values {
        if !out.contains(v) {
            out.push(v.clone());
        }
    }
    out
}

impl ConfigSpace {
    pub fn from_toml(text: &str) -> Result<ConfigSpace> {
        toml::from_str(text)
            .map_err(|e| Error::Format { path: "config space".into(), detail: e.to_string() })
    }

    pub fn load(path: &std::path::Path) -> Result<ConfigSpace> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Format {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        ConfigSpace::from_toml(&text)
    }

    /// Number of configurations the space enumerates to.
    pub fn size(&self) -> usize {
        [
            self.developers.len(),
            self.streaming.len(),
            self.trigger.len(),
            self.model_profile.len(),
            self.quantization.len(),
            self.max_concurrent_requests.len(),
            self.gpu_count.len(),
        ]
        .iter()
        .product()
    }

    /// Expands the space into validated configs in a fixed nesting order
    /// (developers outermost, gpu_count innermost). Repeated axis entries
    /// collapse, so the result never contains duplicate configurations.
    pub fn enumerate(&self) -> Result<Vec<SimulationConfig>> {
        let axes: [(&str, usize); 7] = [
            ("developers", self.developers.len()),
            ("streaming", self.streaming.len()),
            ("trigger", self.trigger.len()),
            ("model_profile", self.model_profile.len()),
            ("quantization", self.quantization.len()),
            ("max_concurrent_requests", self.max_concurrent_requests.len()),
            ("gpu_count", self.gpu_count.len()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, len)| *len == 0) {
            return Err(Error::EmptyAxis(name.to_string()));
        }
        let mut configs = Vec::with_capacity(self.size());
        for &developers in &dedup_in_order(&self.developers) {
            for &streaming in &dedup_in_order(&self.streaming) {
                for &trigger in &dedup_in_order(&self.trigger) {
                    for model_profile in &dedup_in_order(&self.model_profile) {
                        for quantization_tag in &dedup_in_order(&self.quantization) {
                            for &max_concurrent_requests in
                                &dedup_in_order(&self.max_concurrent_requests)
                            {
                                for &gpu_count in &dedup_in_order(&self.gpu_count) {
                                    let config = SimulationConfig {
                                        developers,
                                        streaming,
                                        trigger,
                                        model_profile: model_profile.clone(),
                                        quantization_tag: quantization_tag.clone(),
                                        max_concurrent_requests,
                                        gpu_count,
                                    };
                                    config.validate()?;
                                    configs.push(config);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(configs)
    }
}
