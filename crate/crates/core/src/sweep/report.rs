//! Report rendering: the per-scenario metric table, factor impact tables,
//! and per-developer energy curves, as CSV, JSON, and aligned text.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::metrics::impact::{impact_ratios, ImpactMetric, ImpactRatio};
use crate::metrics::SimulationMetrics;
use crate::Scalar;

use super::ConfigOutcome;

/// One row of the scenario table: a configuration and its headline metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub label: String,
    pub developers: u32,
    pub trigger: String,
    pub streaming: String,
    pub model_profile: String,
    pub quantization: String,
    pub gpu_count: u32,
    pub replicates: u32,
    pub mean_latency_s: Scalar,
    pub p95_latency_s: Scalar,
    pub rejected_fraction: Scalar,
    pub mean_power_watts: Scalar,
    pub energy_per_1000_requests_wh: Scalar,
    pub energy_per_hour_per_developer_wh: Scalar,
    pub co2_per_hour_per_developer_g: Scalar,
    /// Relative spread of replicate mean powers; empty with one replicate.
    pub stability: Option<Scalar>,
    pub saturated: bool,
}

pub fn scenario_rows(outcomes: &[ConfigOutcome]) -> Vec<ScenarioRow> {
    outcomes
        .iter()
        .map(|o| {
            let m = &o.aggregate;
            let c = &o.config;
            ScenarioRow {
                label: c.label(),
                developers: c.developers,
                trigger: c.trigger.name().to_string(),
                streaming: c.streaming.name().to_string(),
                model_profile: c.model_profile.clone(),
                quantization: c.quantization_tag.clone(),
                gpu_count: c.gpu_count,
                replicates: o.replicates.len() as u32,
                mean_latency_s: m.mean_latency_s,
                p95_latency_s: m.p95_latency_s,
                rejected_fraction: m.rejected_fraction,
                mean_power_watts: m.mean_power_watts,
                energy_per_1000_requests_wh: m.energy_per_1000_requests_wh,
                energy_per_hour_per_developer_wh: m.energy_per_hour_per_developer_wh,
                co2_per_hour_per_developer_g: m.co2_per_hour_per_developer_g,
                stability: o.stability,
                saturated: m.saturated,
            }
        })
        .collect()
}

pub fn write_scenario_csv(out: impl Write, rows: &[ScenarioRow]) -> crate::error::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row).map_err(|e| crate::error::Error::Store(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Fixed-width text rendering of the scenario table.
pub fn render_scenario_table(rows: &[ScenarioRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<4} {:<16} {:<10} {:<18} {:>8} {:>8} {:>7} {:>9} {:>11} {:>9} {:>8} {:>5}\n",
        "devs",
        "trigger",
        "stream",
        "model",
        "lat_s",
        "p95_s",
        "rej%",
        "power_W",
        "Wh/1k_req",
        "Wh/h/dev",
        "gCO2/h",
        "sat"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<4} {:<16} {:<10} {:<18} {:>8.2} {:>8.2} {:>7.1} {:>9.1} {:>11.2} {:>9.2} {:>8.2} {:>5}\n",
            r.developers,
            r.trigger,
            if r.streaming.contains("stream_with") { "stream" } else { "no-stream" },
            format!("{}/{}x{}", r.model_profile, r.quantization, r.gpu_count),
            r.mean_latency_s,
            r.p95_latency_s,
            r.rejected_fraction * 100.0,
            r.mean_power_watts,
            r.energy_per_1000_requests_wh,
            r.energy_per_hour_per_developer_wh,
            r.co2_per_hour_per_developer_g,
            if r.saturated { "yes" } else { "no" }
        ));
    }
    out
}

/// One row of the impact long table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRow {
    pub factor: String,
    pub from_option: String,
    pub to_option: String,
    pub metric: String,
    pub pairs: u32,
    pub geometric_mean: Scalar,
    pub min_ratio: Scalar,
    pub max_ratio: Scalar,
}

pub fn impact_rows(ratios: &[ImpactRatio]) -> Vec<ImpactRow> {
    ratios
        .iter()
        .map(|r| ImpactRow {
            factor: r.factor.clone(),
            from_option: r.from_option.clone(),
            to_option: r.to_option.clone(),
            metric: match r.metric {
                ImpactMetric::Energy => "energy".to_string(),
                ImpactMetric::MeanLatency => "mean_latency".to_string(),
            },
            pairs: r.ratios.len() as u32,
            geometric_mean: r.geometric_mean,
            min_ratio: r.ratios.iter().copied().fold(Scalar::INFINITY, Scalar::min),
            max_ratio: r.ratios.iter().copied().fold(Scalar::NEG_INFINITY, Scalar::max),
        })
        .collect()
}

pub fn write_impact_csv(out: impl Write, rows: &[ImpactRow]) -> crate::error::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row).map_err(|e| crate::error::Error::Store(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// One point of a per-developer energy curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub developers: u32,
    pub energy_per_hour_per_developer_wh: Scalar,
    pub mean_power_watts: Scalar,
    pub mean_latency_s: Scalar,
    pub rejected_fraction: Scalar,
    pub saturated: bool,
}

/// Energy share per developer as the crowd grows, for one combination of
/// all the non-developer factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyCurve {
    pub group: String,
    pub points: Vec<CurvePoint>,
}

fn group_key(m: &SimulationMetrics) -> String {
    let c = &m.config;
    format!(
        "{}/{}/{}/{}/mc{}/{}gpu",
        c.model_profile,
        c.quantization_tag,
        c.streaming.name(),
        c.trigger.name(),
        c.max_concurrent_requests,
        c.gpu_count
    )
}

/// Groups outcomes by every factor except `developers` and orders each
/// group's points by crowd size.
pub fn energy_curves(outcomes: &[ConfigOutcome]) -> Vec<EnergyCurve> {
    let mut groups: std::collections::BTreeMap<String, Vec<CurvePoint>> = Default::default();
    for outcome in outcomes {
        let m = &outcome.aggregate;
        groups.entry(group_key(m)).or_default().push(CurvePoint {
            developers: outcome.config.developers,
            energy_per_hour_per_developer_wh: m.energy_per_hour_per_developer_wh,
            mean_power_watts: m.mean_power_watts,
            mean_latency_s: m.mean_latency_s,
            rejected_fraction: m.rejected_fraction,
            saturated: m.saturated,
        });
    }
    groups
        .into_iter()
        .map(|(group, mut points)| {
            points.sort_by_key(|p| p.developers);
            EnergyCurve { group, points }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CurveCsvRow {
    group: String,
    developers: u32,
    energy_per_hour_per_developer_wh: Scalar,
    mean_power_watts: Scalar,
    mean_latency_s: Scalar,
    rejected_fraction: Scalar,
    saturated: bool,
}

pub fn write_curve_csv(out: impl Write, curves: &[EnergyCurve]) -> crate::error::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for curve in curves {
        for p in &curve.points {
            writer
                .serialize(CurveCsvRow {
                    group: curve.group.clone(),
                    developers: p.developers,
                    energy_per_hour_per_developer_wh: p.energy_per_hour_per_developer_wh,
                    mean_power_watts: p.mean_power_watts,
                    mean_latency_s: p.mean_latency_s,
                    rejected_fraction: p.rejected_fraction,
                    saturated: p.saturated,
                })
                .map_err(|e| crate::error::Error::Store(e.to_string()))?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Everything a sweep produced, in one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub scenarios: Vec<ScenarioRow>,
    pub impacts: Vec<ImpactRow>,
    pub curves: Vec<EnergyCurve>,
}

pub fn full_report(outcomes: &[ConfigOutcome]) -> FullReport {
    let aggregates: Vec<SimulationMetrics> =
        outcomes.iter().map(|o| o.aggregate.clone()).collect();
    FullReport {
        scenarios: scenario_rows(outcomes),
        impacts: impact_rows(&impact_ratios(&aggregates)),
        curves: energy_curves(outcomes),
    }
}
