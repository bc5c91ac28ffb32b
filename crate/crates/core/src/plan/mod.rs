//! Replay planning: turn developer sessions plus a simulation configuration
//! into a deterministic, time-offset request schedule.
//!
//! Planning is pure: the same `(sessions, config, seed)` triple always
//! produces the same plan. The pipeline is trigger filtering, midpoint
//! alignment to the simulation window, then expansion to the requested
//! developer count (splitting into replication rounds when the dataset has
//! more developers than requested).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::config::{SimulationConfig, StreamingMode, TriggerMode};
use crate::error::{Error, Result};
use crate::trace::DeveloperSession;

/// Default simulation window: one hour.
pub const DEFAULT_WINDOW_MS: u64 = 3_600_000;

/// Generation cap used when the trace does not record one.
pub const DEFAULT_MAX_NEW_TOKENS: u32 = 256;

/// Upper bound of the random shift applied to duplicated sessions.
pub const MAX_DUPLICATE_OFFSET_MS: u64 = 30_000;

/// A session shifted into window coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSession {
    pub developer_id: String,
    /// Requests in window coordinates, ordered by fire offset.
    pub requests: Vec<PlannedRequest>,
}

/// One request of an aligned session, before developer expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRequest {
    pub source_request_id: String,
    pub fire_offset_ms: u64,
    pub prompt: String,
    pub max_new_tokens: u32,
}

/// One entry of the final schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledRequest {
    /// Replication round this request belongs to; rounds run independently.
    pub round: u32,
    pub virtual_developer_id: u32,
    pub source_request_id: String,
    /// Milliseconds from simulation start.
    pub fire_offset_ms: u64,
    /// Whether firing this request cancels the developer's previous one.
    pub cancels_previous: bool,
    pub prompt: String,
    pub max_new_tokens: u32,
}

/// Interval during which every virtual developer of a round is active:
/// from the latest first-request offset to the earliest last-request offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapWindow {
    pub round: u32,
    pub start_ms: u64,
    pub end_ms: u64,
}

/// A complete, executable replay schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayPlan {
    pub version: u32,
    pub config: SimulationConfig,
    pub seed: u64,
    pub window_ms: u64,
    pub rounds: u32,
    /// Sorted by (round, fire_offset, virtual_developer_id, source_request_id).
    pub schedule: Vec<ScheduledRequest>,
    /// One entry per round, in round order.
    pub overlap_windows: Vec<OverlapWindow>,
}

impl ReplayPlan {
    /// Requests belonging to one round, in schedule order.
    pub fn round_schedule(&self, round: u32) -> impl Iterator<Item = &ScheduledRequest> {
        self.schedule.iter().filter(move |r| r.round == round)
    }

    pub fn overlap_window(&self, round: u32) -> Option<OverlapWindow> {
        self.overlap_windows.iter().copied().find(|w| w.round == round)
    }

    /// Virtual developers participating in one round.
    pub fn developers_in_round(&self, round: u32) -> usize {
        let mut ids: Vec<u32> = self.round_schedule(round).map(|r| r.virtual_developer_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Drops requests a ManualEmulated trigger would never send, keeping original
/// timestamps. Automatic mode is the identity.
pub fn filter_trigger(sessions: &[DeveloperSession], mode: TriggerMode) -> Vec<DeveloperSession> {
    match mode {
        TriggerMode::Automatic => sessions.to_vec(),
        TriggerMode::ManualEmulated => sessions
            .iter()
            .map(|s| DeveloperSession {
                developer_id: s.developer_id.clone(),
                requests: s
                    .requests
                    .iter()
                    .filter(|r| r.outcome.was_displayed())
                    .cloned()
                    .collect(),
                session_duration_ms: s.session_duration_ms,
            })
            .collect(),
    }
}

/// Shifts each session so its midpoint sits at `window/2`, truncating
/// sessions longer than the window to `[0, window)`.
///
/// Sessions left without requests are dropped and reported in `warnings`.
pub fn align_sessions(
    sessions: &[DeveloperSession],
    window_ms: u64,
) -> (Vec<AlignedSession>, Vec<String>) {
    assert!(window_ms > 0, "window must be positive");
    let mut aligned = Vec::new();
    let mut warnings = Vec::new();
    for session in sessions {
        let shift = if session.session_duration_ms >= window_ms {
            0
        } else {
            (window_ms - session.session_duration_ms) / 2
        };
        let mut requests: Vec<PlannedRequest> = session
            .requests
            .iter()
            .filter_map(|r| {
                let fire_offset_ms = r.issue_time_ms + shift;
                (fire_offset_ms < window_ms).then(|| PlannedRequest {
                    source_request_id: r.request_id.clone(),
                    fire_offset_ms,
                    prompt: r.prompt.clone(),
                    max_new_tokens: r.max_new_tokens.unwrap_or(DEFAULT_MAX_NEW_TOKENS),
                })
            })
            .collect();
        requests.sort_by(|a, b| {
            a.fire_offset_ms
                .cmp(&b.fire_offset_ms)
                .then_with(|| a.source_request_id.cmp(&b.source_request_id))
        });
        if requests.is_empty() {
            warnings.push(format!(
                "session {} has no requests inside the window and was dropped",
                session.developer_id
            ));
            continue;
        }
        aligned.push(AlignedSession { developer_id: session.developer_id.clone(), requests });
    }
    (aligned, warnings)
}

/// A virtual developer slot within one round.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSession {
    pub virtual_developer_id: u32,
    pub source_developer_id: String,
    /// Extra shift applied to duplicated sessions; 0 for originals.
    pub offset_ms: u64,
    /// True when this slot only pads a short final round to full concurrency.
    pub is_pad: bool,
    pub requests: Vec<PlannedRequest>,
}

/// Expands `K` aligned sessions to `n` virtual developers.
///
/// For `n <= K` the sessions are dealt into `ceil(K/n)` rounds; every source
/// session is a primary member of exactly one round, and a short final round
/// is padded back to `n` with offset duplicates of other sessions. For
/// `n > K` a single round holds every session once plus `n - K` duplicates,
/// each shifted by a uniform offset of up to 30 seconds.
pub fn expand_developers(
    aligned: &[AlignedSession],
    n: u32,
    seed: u64,
    window_ms: u64,
) -> Vec<Vec<VirtualSession>> {
    assert!(!aligned.is_empty() && n >= 1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let k = aligned.len();
    let n = n as usize;

    let duplicate = |rng: &mut ChaCha20Rng,
                     source: &AlignedSession,
                     virtual_developer_id: u32,
                     is_pad: bool| {
        // Redraw if the shift pushes every request past the window; offset 0
        // always succeeds because aligned sessions are non-empty.
        for attempt in 0..64 {
            let offset_ms = if attempt < 63 {
                rng.random_range(0..=MAX_DUPLICATE_OFFSET_MS)
            } else {
                0
            };
            let requests: Vec<PlannedRequest> = source
                .requests
                .iter()
                .filter(|r| r.fire_offset_ms + offset_ms < window_ms)
                .map(|r| PlannedRequest {
                    fire_offset_ms: r.fire_offset_ms + offset_ms,
                    ..r.clone()
                })
                .collect();
            if !requests.is_empty() {
                return VirtualSession {
                    virtual_developer_id,
                    source_developer_id: source.developer_id.clone(),
                    offset_ms,
                    is_pad,
                    requests,
                };
            }
        }
        unreachable!("offset 0 preserves a non-empty session");
    };

    if n >= k {
        let mut round: Vec<VirtualSession> = aligned
            .iter()
            .enumerate()
            .map(|(i, s)| VirtualSession {
                virtual_developer_id: i as u32,
                source_developer_id: s.developer_id.clone(),
                offset_ms: 0,
                is_pad: false,
                requests: s.requests.clone(),
            })
            .collect();
        for v in k..n {
            let source = &aligned[rng.random_range(0..k)];
            round.push(duplicate(&mut rng, source, v as u32, false));
        }
        return vec![round];
    }

    // n < k: deal a seeded shuffle of all sessions into rounds of n.
    let mut order: Vec<usize> = (0..k).collect();
    shuffle(&mut order, &mut rng);
    let mut rounds = Vec::new();
    for chunk in order.chunks(n) {
        let mut round: Vec<VirtualSession> = chunk
            .iter()
            .enumerate()
            .map(|(i, &idx)| VirtualSession {
                virtual_developer_id: i as u32,
                source_developer_id: aligned[idx].developer_id.clone(),
                offset_ms: 0,
                is_pad: false,
                requests: aligned[idx].requests.clone(),
            })
            .collect();
        while round.len() < n {
            // Pad from sessions outside this round so concurrency stays n.
            let members: Vec<&str> =
                round.iter().map(|v| v.source_developer_id.as_str()).collect();
            let candidates: Vec<usize> = (0..k)
                .filter(|&i| !members.contains(&aligned[i].developer_id.as_str()))
                .collect();
            let source = &aligned[candidates[rng.random_range(0..candidates.len())]];
            round.push(duplicate(&mut rng, source, round.len() as u32, true));
        }
        rounds.push(round);
    }
    rounds
}

/// Fisher-Yates with the plan's seeded generator.
fn shuffle<T>(items: &mut [T], rng: &mut ChaCha20Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Builds the full replay plan for one configuration.
pub fn build_plan(
    sessions: &[DeveloperSession],
    config: &SimulationConfig,
    seed: u64,
    window_ms: u64,
) -> Result<ReplayPlan> {
    config.validate()?;
    let filtered = filter_trigger(sessions, config.trigger);
    let (aligned, warnings) = align_sessions(&filtered, window_ms);
    for warning in &warnings {
        log::warn!("{warning}");
    }
    if aligned.is_empty() {
        return Err(Error::PlanEmpty);
    }

    let rounds = expand_developers(&aligned, config.developers, seed, window_ms);
    let mut schedule = Vec::new();
    let mut overlap_windows = Vec::new();
    for (round_idx, round) in rounds.iter().enumerate() {
        let round_idx = round_idx as u32;
        let mut start = 0u64;
        let mut end = u64::MAX;
        for vs in round {
            let first = vs.requests.first().expect("virtual sessions are non-empty");
            let last = vs.requests.last().expect("virtual sessions are non-empty");
            start = start.max(first.fire_offset_ms);
            end = end.min(last.fire_offset_ms);
            for (i, req) in vs.requests.iter().enumerate() {
                schedule.push(ScheduledRequest {
                    round: round_idx,
                    virtual_developer_id: vs.virtual_developer_id,
                    source_request_id: req.source_request_id.clone(),
                    fire_offset_ms: req.fire_offset_ms,
                    cancels_previous: config.streaming == StreamingMode::StreamWithCancel
                        && i > 0,
                    prompt: req.prompt.clone(),
                    max_new_tokens: req.max_new_tokens,
                });
            }
        }
        overlap_windows.push(OverlapWindow { round: round_idx, start_ms: start, end_ms: end });
    }
    if schedule.is_empty() {
        return Err(Error::PlanEmpty);
    }
    schedule.sort_by(|a, b| {
        a.round
            .cmp(&b.round)
            .then(a.fire_offset_ms.cmp(&b.fire_offset_ms))
            .then(a.virtual_developer_id.cmp(&b.virtual_developer_id))
            .then_with(|| a.source_request_id.cmp(&b.source_request_id))
    });
    Ok(ReplayPlan {
        version: 1,
        config: config.clone(),
        seed,
        window_ms,
        rounds: rounds.len() as u32,
        schedule,
        overlap_windows,
    })
}
