//! Factor impact ratios: how much switching one configuration option,
//! everything else held fixed, changes energy or latency.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::SimulationConfig;
use crate::Scalar;

use super::SimulationMetrics;

/// Which measured quantity the ratio applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactMetric {
    Energy,
    MeanLatency,
}

/// Aggregated ratio for one directed option switch of one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRatio {
    pub factor: String,
    pub from_option: String,
    pub to_option: String,
    pub metric: ImpactMetric,
    /// Geometric mean of `to / from` over all contributing pairs.
    pub geometric_mean: Scalar,
    /// The individual `to / from` ratios, in pair-discovery order.
    pub ratios: Vec<Scalar>,
}

/// The factor decomposition of a configuration, as (name, value) strings.
pub fn factor_values(config: &SimulationConfig) -> Vec<(String, String)> {
    vec![
        ("developers".into(), config.developers.to_string()),
        ("streaming".into(), format!("{:?}", config.streaming)),
        ("trigger".into(), format!("{:?}", config.trigger)),
        ("model_profile".into(), config.model_profile.clone()),
        ("quantization".into(), config.quantization_tag.clone()),
        ("max_concurrent_requests".into(), config.max_concurrent_requests.to_string()),
        ("gpu_count".into(), config.gpu_count.to_string()),
    ]
}

/// Index of the single differing factor, or `None` when the configs differ
/// in zero or more than one factor.
fn single_difference(a: &SimulationConfig, b: &SimulationConfig) -> Option<usize> {
    let fa = factor_values(a);
    let fb = factor_values(b);
    let mut diff = None;
    for (i, (va, vb)) in fa.iter().zip(fb.iter()).enumerate() {
        if va.1 != vb.1 {
            if diff.is_some() {
                return None;
            }
            diff = Some(i);
        }
    }
    diff
}

fn metric_value(m: &SimulationMetrics, metric: ImpactMetric) -> Scalar {
    match metric {
        ImpactMetric::Energy => m.energy_wh,
        ImpactMetric::MeanLatency => m.mean_latency_s,
    }
}

/// Computes impact ratios over a set of measured configurations.
///
/// Every unordered pair differing in exactly one factor contributes a
/// `to / from` ratio in both directions; ratios are grouped by
/// (factor, from option, to option) and reduced by geometric mean. Pairs
/// where either side's value is non-positive or non-finite are skipped for
/// that metric. Identical configurations differ in zero factors and are
/// never paired.
pub fn impact_ratios(results: &[SimulationMetrics]) -> Vec<ImpactRatio> {
    let mut groups: BTreeMap<(String, String, String, ImpactMetric), Vec<Scalar>> =
        BTreeMap::new();
    for i in 0..results.len() {
        for j in (i + 1)..results.len() {
            let (a, b) = (&results[i], &results[j]);
            let Some(idx) = single_difference(&a.config, &b.config) else {
                continue;
            };
            let factors_a = factor_values(&a.config);
            let factors_b = factor_values(&b.config);
            let factor = factors_a[idx].0.clone();
            let (va, vb) = (factors_a[idx].1.clone(), factors_b[idx].1.clone());
            for metric in [ImpactMetric::Energy, ImpactMetric::MeanLatency] {
                let (ma, mb) = (metric_value(a, metric), metric_value(b, metric));
                if !(ma.is_finite() && mb.is_finite() && ma > 0.0 && mb > 0.0) {
                    continue;
                }
                groups
                    .entry((factor.clone(), va.clone(), vb.clone(), metric))
                    .or_default()
                    .push(mb / ma);
                groups
                    .entry((factor.clone(), vb.clone(), va.clone(), metric))
                    .or_default()
                    .push(ma / mb);
            }
        }
    }
    groups
        .into_iter()
        .map(|((factor, from_option, to_option, metric), ratios)| {
            let log_mean =
                ratios.iter().map(|r| r.ln()).sum::<Scalar>() / ratios.len() as Scalar;
            ImpactRatio {
                factor,
                from_option,
                to_option,
                metric,
                geometric_mean: log_mean.exp(),
                ratios,
            }
        })
        .collect()
}
