//! Energy and performance metrics: power integration, per-developer shares,
//! saturation, CO2, replicate stability, and factor impact ratios.
//!
//! The numeric kernels are generic over the scalar type through [`Real`];
//! the public report types use the crate-level [`crate::Scalar`] (f64).

pub mod impact;
pub mod sampler;

use serde::{Deserialize, Serialize};

use crate::config::SimulationConfig;
use crate::engine::virtual_clock::RoundExecution;
use crate::engine::{RequestStatus, RawRunLog};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::plan::ReplayPlan;
use crate::Scalar;

/// Where a power reading came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleSource {
    CpuEnergyCounter,
    GpuManagementPoll,
    Simulated,
}

/// One power meter reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub timestamp_ms: Scalar,
    pub watts: Scalar,
    pub source: SampleSource,
}

/// Energy integrated over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub window_start_ms: Scalar,
    pub window_end_ms: Scalar,
    pub mean_power_watts: Scalar,
    pub energy_wh: Scalar,
    pub per_developer_energy_wh: Scalar,
    pub developer_count: u32,
}

/// Left-rectangle integral of a sampled series over a window, in
/// value-hours. Each sample holds until the next one; the last sample holds
/// until the window end.
pub fn integrate_series<F: Real>(points: &[(F, F)], window: (F, F)) -> F {
    let (start, end) = window;
    let ms_per_hour = F::from_f64(3_600_000.0).unwrap();
    let mut total = F::zero();
    for (i, &(t, value)) in points.iter().enumerate() {
        let next_t = points.get(i + 1).map_or(end, |&(nt, _)| nt);
        let lo = if t > start { t } else { start };
        let hi = if next_t < end { next_t } else { end };
        if hi > lo {
            total = total + value * (hi - lo) / ms_per_hour;
        }
    }
    total
}

/// Integrates power samples over `[start, end]` milliseconds, summing
/// across sources. Requires at least two samples overlapping the window.
pub fn integrate(
    samples: &[PowerSample],
    window: (Scalar, Scalar),
    developer_count: u32,
) -> Result<EnergyReport> {
    let (start, end) = window;
    if !end.is_finite() || !start.is_finite() || end <= start {
        return Err(Error::EmptyWindow { start, end });
    }
    let sources = [
        SampleSource::CpuEnergyCounter,
        SampleSource::GpuManagementPoll,
        SampleSource::Simulated,
    ];
    let mut energy_wh = 0.0;
    let mut overlapping = 0usize;
    for source in sources {
        let series: Vec<(Scalar, Scalar)> = samples
            .iter()
            .filter(|s| s.source == source)
            .map(|s| (s.timestamp_ms, s.watts))
            .collect();
        if series.is_empty() {
            continue;
        }
        if series.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(Error::Format {
                path: "power samples".to_string(),
                detail: format!("{source:?} series is not time-ordered"),
            });
        }
        overlapping += series
            .iter()
            .zip(series.iter().skip(1).map(|&(t, _)| t).chain(std::iter::once(end)))
            .filter(|(&(t, _), next)| *next > start && t < end)
            .count();
        energy_wh += integrate_series(&series, window);
    }
    if overlapping < 2 {
        return Err(Error::EmptyWindow { start, end });
    }
    let hours = (end - start) / 3_600_000.0;
    let mean_power_watts = energy_wh / hours;
    let developer_count = developer_count.max(1);
    Ok(EnergyReport {
        window_start_ms: start,
        window_end_ms: end,
        mean_power_watts,
        energy_wh,
        per_developer_energy_wh: energy_wh / developer_count as Scalar,
        developer_count,
    })
}

/// Saturation thresholds; the defaults follow the published rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationThresholds {
    pub rejected_fraction: Scalar,
    pub mean_latency_s: Scalar,
}

impl Default for SaturationThresholds {
    fn default() -> Self {
        SaturationThresholds { rejected_fraction: 0.10, mean_latency_s: 20.0 }
    }
}

/// A server is saturated when rejections exceed 10% or mean latency
/// exceeds 20 s (strict comparisons).
pub fn is_saturated(
    rejected_fraction: Scalar,
    mean_latency_s: Scalar,
    thresholds: SaturationThresholds,
) -> bool {
    rejected_fraction > thresholds.rejected_fraction
        || mean_latency_s > thresholds.mean_latency_s
}

/// Default grid carbon intensity in grams per kWh.
pub const DEFAULT_CARBON_INTENSITY: Scalar = 56.0;

/// Grams of CO2 for an energy amount in Wh.
pub fn co2_grams(energy_wh: Scalar, intensity_g_per_kwh: Scalar) -> Result<Scalar> {
    if energy_wh < 0.0 {
        return Err(Error::NegativeEnergy(energy_wh));
    }
    if intensity_g_per_kwh < 0.0 {
        return Err(Error::NegativeIntensity(intensity_g_per_kwh));
    }
    Ok(energy_wh / 1_000.0 * intensity_g_per_kwh)
}

/// Population standard deviation over mean of replicate mean powers.
pub fn stability<F: Real>(replicate_means: &[F]) -> Result<F> {
    if replicate_means.len() < 2 {
        return Err(Error::SingleReplicate);
    }
    let n = F::from_usize(replicate_means.len()).unwrap();
    let mean = replicate_means.iter().fold(F::zero(), |a, &b| a + b) / n;
    let var = replicate_means
        .iter()
        .fold(F::zero(), |a, &b| a + (b - mean) * (b - mean))
        / n;
    Ok(var.sqrt() / mean)
}

/// Nearest-rank percentile of an unsorted slice; `p` in (0, 1].
pub fn percentile<F: Real>(values: &[F], p: f64) -> Option<F> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = (p * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// All per-configuration metrics, aggregated over replication rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMetrics {
    pub config: SimulationConfig,
    pub mean_latency_s: Scalar,
    pub p95_latency_s: Scalar,
    pub rejected_fraction: Scalar,
    pub completed: u64,
    pub fired: u64,
    pub mean_power_watts: Scalar,
    pub energy_wh: Scalar,
    pub energy_per_hour_per_developer_wh: Scalar,
    pub energy_per_1000_requests_wh: Scalar,
    pub co2_per_hour_per_developer_g: Scalar,
    pub saturated: bool,
    pub rounds: u32,
}

/// Per-round intermediate metrics, before aggregation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub energy: EnergyReport,
    pub latencies_ms: Vec<Scalar>,
    pub fired: u64,
    pub rejected: u64,
    pub completed: u64,
}

/// Metrics of one round restricted to its overlap window; requests belong to
/// the window by send time.
pub fn restrict_to_overlap(
    log: &RawRunLog,
    samples: &[PowerSample],
    overlap: (u64, u64),
    developer_count: u32,
) -> Result<RoundMetrics> {
    let (start, end) = overlap;
    if start >= end {
        return Err(Error::EmptyOverlap { round: log.round, start, end });
    }
    let window = (start as Scalar, end as Scalar);
    let energy = integrate(samples, window, developer_count)?;
    let in_window: Vec<_> = log
        .records
        .iter()
        .filter(|r| r.send_ms >= window.0 && r.send_ms <= window.1)
        .collect();
    let latencies_ms: Vec<Scalar> = in_window.iter().filter_map(|r| r.latency_ms()).collect();
    Ok(RoundMetrics {
        round: log.round,
        energy,
        latencies_ms,
        fired: in_window.len() as u64,
        rejected: in_window
            .iter()
            .filter(|r| r.status == RequestStatus::RejectedByServer)
            .count() as u64,
        completed: in_window
            .iter()
            .filter(|r| r.status == RequestStatus::Completed)
            .count() as u64,
    })
}

/// Reduces executed rounds to one [`SimulationMetrics`], computing every
/// quantity inside each round's overlap window and averaging across rounds.
pub fn analyze_rounds(
    rounds: &[RoundExecution],
    plan: &ReplayPlan,
    thresholds: SaturationThresholds,
    carbon_intensity: Scalar,
) -> Result<SimulationMetrics> {
    if rounds.is_empty() {
        return Err(Error::NoCompletedRuns);
    }
    let developers = plan.config.developers;
    let mut per_round = Vec::with_capacity(rounds.len());
    for exec in rounds {
        let overlap = plan
            .overlap_window(exec.log.round)
            .ok_or_else(|| Error::InvalidConfig(format!("round {} missing overlap", exec.log.round)))?;
        per_round.push(restrict_to_overlap(
            &exec.log,
            &exec.samples,
            (overlap.start_ms, overlap.end_ms),
            developers,
        )?);
    }

    let n_rounds = per_round.len() as Scalar;
    let mean_power_watts =
        per_round.iter().map(|r| r.energy.mean_power_watts).sum::<Scalar>() / n_rounds;
    let energy_wh = per_round.iter().map(|r| r.energy.energy_wh).sum::<Scalar>() / n_rounds;
    let fired: u64 = per_round.iter().map(|r| r.fired).sum();
    let rejected: u64 = per_round.iter().map(|r| r.rejected).sum();
    let completed: u64 = per_round.iter().map(|r| r.completed).sum();
    let all_latencies: Vec<Scalar> =
        per_round.iter().flat_map(|r| r.latencies_ms.iter().copied()).collect();
    let mean_latency_s = if all_latencies.is_empty() {
        0.0
    } else {
        all_latencies.iter().sum::<Scalar>() / all_latencies.len() as Scalar / 1_000.0
    };
    let p95_latency_s = percentile(&all_latencies, 0.95).unwrap_or(0.0) / 1_000.0;
    let rejected_fraction = if fired == 0 { 0.0 } else { rejected as Scalar / fired as Scalar };

    // Mean power divided by developers: watts per developer equals Wh per
    // hour per developer.
    let energy_per_hour_per_developer_wh = mean_power_watts / developers.max(1) as Scalar;
    let mean_fired = fired as Scalar / n_rounds;
    let energy_per_1000_requests_wh =
        if mean_fired > 0.0 { energy_wh / mean_fired * 1_000.0 } else { 0.0 };
    let co2_per_hour_per_developer_g =
        co2_grams(energy_per_hour_per_developer_wh, carbon_intensity)?;

    Ok(SimulationMetrics {
        config: plan.config.clone(),
        mean_latency_s,
        p95_latency_s,
        rejected_fraction,
        completed,
        fired,
        mean_power_watts,
        energy_wh,
        energy_per_hour_per_developer_wh,
        energy_per_1000_requests_wh,
        co2_per_hour_per_developer_g,
        saturated: is_saturated(rejected_fraction, mean_latency_s, thresholds),
        rounds: rounds.len() as u32,
    })
}
