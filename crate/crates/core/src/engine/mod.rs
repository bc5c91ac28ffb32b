//! Replay execution: fire scheduled requests at their offsets against a
//! generation endpoint, honoring streaming cancellation, and record one
//! terminal [`RequestRecord`] per scheduled request.
//!
//! Two executors share these types: [`virtual_clock`] drives the built-in
//! simulator through a deterministic event loop, and [`live`] replays over
//! HTTP in real time.

pub mod live;
pub mod virtual_clock;

use serde::{Deserialize, Serialize};

use crate::config::SimulationConfig;
use crate::error::{Error, Result};

/// Default client timeout; must exceed the worst saturated latencies.
pub const DEFAULT_TIMEOUT_MS: u64 = 300_000;

/// Terminal state of one fired request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Completed,
    /// Client-side cancellation: superseded by a newer request or shutdown.
    Canceled,
    /// Admission cap answered 429.
    RejectedByServer,
    TimedOut,
}

/// Outcome of one scheduled request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub round: u32,
    pub virtual_developer_id: u32,
    pub source_request_id: String,
    /// Scheduled fire offset from the plan.
    pub fire_offset_ms: u64,
    /// When the request was actually sent (equals the offset in virtual mode).
    pub send_ms: f64,
    /// Terminal time for completed, rejected, and timed-out requests.
    pub completion_ms: Option<f64>,
    /// When the client canceled, for canceled requests.
    pub canceled_ms: Option<f64>,
    pub status: RequestStatus,
    /// Tokens the client received before the terminal event.
    pub tokens_generated: u32,
    /// Absolute send-time deviation from schedule; zero in virtual mode.
    pub jitter_ms: f64,
}

impl RequestRecord {
    /// Send-to-completion wall time; present only for completed requests.
    pub fn latency_ms(&self) -> Option<f64> {
        match self.status {
            RequestStatus::Completed => self.completion_ms.map(|c| c - self.send_ms),
            _ => None,
        }
    }

    /// Time at which the request stopped occupying the client.
    pub fn terminal_ms(&self) -> f64 {
        self.completion_ms.or(self.canceled_ms).unwrap_or(self.send_ms)
    }
}

/// How the run's clock advanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    Virtual,
    Real,
}

/// Everything recorded while executing one replication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRunLog {
    pub config: SimulationConfig,
    pub seed: u64,
    pub round: u32,
    pub clock: ClockMode,
    /// One record per scheduled request of the round.
    pub records: Vec<RequestRecord>,
    pub run_start_ms: f64,
    pub run_end_ms: f64,
}

impl RawRunLog {
    pub fn count(&self, status: RequestStatus) -> usize {
        self.records.iter().filter(|r| r.status == status).count()
    }

    /// Every record must be terminal and the four statuses must partition
    /// the schedule.
    pub fn check_complete(&self, scheduled: usize) -> Result<()> {
        if self.records.len() != scheduled {
            return Err(Error::InvalidConfig(format!(
                "run log holds {} records for {scheduled} scheduled requests",
                self.records.len()
            )));
        }
        Ok(())
    }
}

/// Executor knobs shared by both clock modes.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineOptions {
    pub timeout_ms: u64,
    /// Overrides the profile's sampling cadence when set.
    pub sample_interval_ms: Option<u64>,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions { timeout_ms: DEFAULT_TIMEOUT_MS, sample_interval_ms: None }
    }
}

/// A single-developer overlap of in-flight intervals, returned by
/// [`check_single_flight`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlightOverlap {
    pub virtual_developer_id: u32,
    pub first_request: String,
    pub second_request: String,
}

/// Interval-overlap check for the streaming invariant: at most one in-flight
/// request per developer at any instant. An interval runs from send to the
/// terminal event; touching endpoints (cancel at the successor's send time)
/// do not overlap.
pub fn check_single_flight(records: &[RequestRecord]) -> Vec<FlightOverlap> {
    use std::collections::BTreeMap;
    let mut by_dev: BTreeMap<(u32, u32), Vec<&RequestRecord>> = BTreeMap::new();
    for record in records {
        if record.status != RequestStatus::RejectedByServer {
            by_dev.entry((record.round, record.virtual_developer_id)).or_default().push(record);
        }
    }
    let mut overlaps = Vec::new();
    for ((_round, dev), mut recs) in by_dev {
        recs.sort_by(|a, b| a.send_ms.total_cmp(&b.send_ms));
        for pair in recs.windows(2) {
            if pair[0].terminal_ms() > pair[1].send_ms {
                overlaps.push(FlightOverlap {
                    virtual_developer_id: dev,
                    first_request: pair[0].source_request_id.clone(),
                    second_request: pair[1].source_request_id.clone(),
                });
            }
        }
    }
    overlaps
}
