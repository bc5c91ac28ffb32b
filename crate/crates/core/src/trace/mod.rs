//! Telemetry trace model: canonical events, request lifecycle reconstruction,
//! and usage statistics.
//!
//! A trace is a JSON-lines stream of [`TelemetryEvent`]s. Events are grouped
//! by developer, ordered by `(timestamp_ms, event_id)`, and folded into
//! [`GenerationRequest`]s with a single terminal [`RequestOutcome`] each.

pub mod distance;
pub mod parse;
pub mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Well-known payload keys of the canonical telemetry schema.
pub mod payload_keys {
    /// Opaque request identifier linking follow-up events to their request.
    pub const REQUEST_ID: &str = "request_id";
    /// Prompt text carried by `request_issued` events.
    pub const PROMPT: &str = "prompt";
    /// Requested generation cap carried by `request_issued` events.
    pub const MAX_NEW_TOKENS: &str = "max_new_tokens";
    /// Suggestion text carried by `generation_shown` events. Empty or missing
    /// text marks an empty completion.
    pub const SUGGESTION: &str = "suggestion";
    /// Generated token count carried by `generation_shown` events.
    pub const TOKENS: &str = "tokens";
    /// Explicit retention verdict carried by `still_in_code` probes.
    pub const RETAINED: &str = "retained";
    /// Current code region carried by `still_in_code` probes; used to compute
    /// retention when no explicit verdict is present.
    pub const REGION: &str = "region";
}

/// Enumerated kinds of telemetry events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// The assistant decided to request a generation.
    RequestIssued,
    /// A generation finished and its text (possibly empty) reached the editor.
    GenerationShown,
    /// The developer accepted the shown suggestion.
    Accepted,
    /// The developer dismissed the shown suggestion.
    Rejected,
    /// The request was explicitly canceled before completing.
    Canceled,
    /// Periodic probe checking whether an accepted suggestion is still in the code.
    StillInCode,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::RequestIssued,
        EventKind::GenerationShown,
        EventKind::Accepted,
        EventKind::Rejected,
        EventKind::Canceled,
        EventKind::StillInCode,
    ];

    /// Canonical snake_case name, as used on the wire.
    pub fn name(self) -> &'static str {
        match self {
            EventKind::RequestIssued => "request_issued",
            EventKind::GenerationShown => "generation_shown",
            EventKind::Accepted => "accepted",
            EventKind::Rejected => "rejected",
            EventKind::Canceled => "canceled",
            EventKind::StillInCode => "still_in_code",
        }
    }
}

/// One parsed telemetry message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub event_id: String,
    pub developer_id: String,
    /// Milliseconds since the developer's session start.
    pub timestamp_ms: u64,
    pub kind: EventKind,
    /// Free-form key-value payload; see [`payload_keys`].
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub payload: serde_json::Map<String, serde_json::Value>,
}

impl TelemetryEvent {
    pub fn payload_str(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(|v| v.as_str())
    }

    pub fn payload_u64(&self, key: &str) -> Option<u64> {
        self.payload.get(key).and_then(|v| v.as_u64())
    }

    pub fn payload_bool(&self, key: &str) -> Option<bool> {
        self.payload.get(key).and_then(|v| v.as_bool())
    }
}

/// Terminal state of a generation request.
///
/// The five categories are mutually exclusive; `Kept` implies the request was
/// accepted, and `Accepted` here means accepted but not verifiably kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestOutcome {
    /// Superseded by a newer request, explicitly canceled, or never finished.
    Canceled,
    /// Finished generating with empty text; never displayed.
    Empty,
    /// Displayed to the developer but not accepted.
    DisplayedRejected,
    /// Accepted, but the last retention probe (if any) no longer finds it.
    Accepted,
    /// Accepted and still present in the code at the last retention probe.
    Kept,
}

impl RequestOutcome {
    pub const ALL: [RequestOutcome; 5] = [
        RequestOutcome::Canceled,
        RequestOutcome::Empty,
        RequestOutcome::DisplayedRejected,
        RequestOutcome::Accepted,
        RequestOutcome::Kept,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RequestOutcome::Canceled => "canceled",
            RequestOutcome::Empty => "empty",
            RequestOutcome::DisplayedRejected => "displayed_rejected",
            RequestOutcome::Accepted => "accepted",
            RequestOutcome::Kept => "kept",
        }
    }

    /// True for outcomes where the generation finished and was displayed.
    pub fn was_displayed(self) -> bool {
        matches!(
            self,
            RequestOutcome::DisplayedRejected | RequestOutcome::Accepted | RequestOutcome::Kept
        )
    }

    /// True for outcomes where the developer accepted the suggestion.
    pub fn was_accepted(self) -> bool {
        matches!(self, RequestOutcome::Accepted | RequestOutcome::Kept)
    }
}

/// A reconstructed generation request with its terminal outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub request_id: String,
    pub developer_id: String,
    /// Milliseconds since session start at which the request was issued.
    pub issue_time_ms: u64,
    pub prompt: String,
    /// Generation cap recorded in the trace, when present.
    pub max_new_tokens: Option<u32>,
    pub outcome: RequestOutcome,
    /// Issue-to-shown latency observed in the trace, when the generation finished.
    pub latency_observed_ms: Option<u64>,
    /// Suggestion text; present iff the outcome is a displayed one.
    pub suggestion: Option<String>,
    /// Generated token count recorded in the trace, when present.
    pub suggestion_tokens: Option<u32>,
}

/// All requests of one developer, ordered by issue time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeveloperSession {
    pub developer_id: String,
    pub requests: Vec<GenerationRequest>,
    pub session_duration_ms: u64,
}

/// A non-issue event that could not be attached to any request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrphanEvent {
    pub event_id: String,
    pub kind: EventKind,
    pub timestamp_ms: u64,
}

struct PendingRequest {
    request: GenerationRequest,
    shown: bool,
    accepted: bool,
    rejected: bool,
    explicit_cancel: bool,
    last_probe_retained: Option<bool>,
}

impl PendingRequest {
    fn finalize(mut self) -> GenerationRequest {
        let outcome = if self.explicit_cancel || !self.shown {
            RequestOutcome::Canceled
        } else if self.request.suggestion.as_deref().is_none_or(str::is_empty) {
            RequestOutcome::Empty
        } else if self.accepted && !self.rejected {
            match self.last_probe_retained {
                Some(true) => RequestOutcome::Kept,
                _ => RequestOutcome::Accepted,
            }
        } else {
            RequestOutcome::DisplayedRejected
        };
        if !outcome.was_displayed() {
            self.request.suggestion = None;
        }
        self.request.outcome = outcome;
        self.request
    }
}

/// Folds one developer's ordered events into generation requests.
///
/// Every `request_issued` event yields exactly one request. A request with no
/// lifecycle event past its issue before a newer issue arrives (or before the
/// session ends) is classified `Canceled`. Non-issue events that reference no
/// known request are reported as orphans, not errors.
pub fn reconstruct_requests(
    developer_id: &str,
    events: &[TelemetryEvent],
) -> (Vec<GenerationRequest>, Vec<OrphanEvent>) {
    let mut pending: Vec<PendingRequest> = Vec::new();
    let mut orphans = Vec::new();

    // Index into `pending` by request id for id-linked events.
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();

    for ev in events {
        match ev.kind {
            EventKind::RequestIssued => {
                let request_id = ev
                    .payload_str(payload_keys::REQUEST_ID)
                    .unwrap_or(&ev.event_id)
                    .to_string();
                let request = GenerationRequest {
                    request_id: request_id.clone(),
                    developer_id: developer_id.to_string(),
                    issue_time_ms: ev.timestamp_ms,
                    prompt: ev.payload_str(payload_keys::PROMPT).unwrap_or("").to_string(),
                    max_new_tokens: ev
                        .payload_u64(payload_keys::MAX_NEW_TOKENS)
                        .map(|v| v.min(u32::MAX as u64) as u32),
                    outcome: RequestOutcome::Canceled,
                    latency_observed_ms: None,
                    suggestion: None,
                    suggestion_tokens: None,
                };
                by_id.insert(request_id, pending.len());
                pending.push(PendingRequest {
                    request,
                    shown: false,
                    accepted: false,
                    rejected: false,
                    explicit_cancel: false,
                    last_probe_retained: None,
                });
            }
            kind => {
                let target = ev
                    .payload_str(payload_keys::REQUEST_ID)
                    .and_then(|id| by_id.get(id).copied())
                    .or_else(|| default_target(&pending, kind));
                let Some(idx) = target else {
                    orphans.push(OrphanEvent {
                        event_id: ev.event_id.clone(),
                        kind,
                        timestamp_ms: ev.timestamp_ms,
                    });
                    continue;
                };
                let p = &mut pending[idx];
                match kind {
                    EventKind::GenerationShown => {
                        p.shown = true;
                        p.request.latency_observed_ms =
                            Some(ev.timestamp_ms.saturating_sub(p.request.issue_time_ms));
                        p.request.suggestion = Some(
                            ev.payload_str(payload_keys::SUGGESTION).unwrap_or("").to_string(),
                        );
                        p.request.suggestion_tokens = ev
                            .payload_u64(payload_keys::TOKENS)
                            .map(|v| v.min(u32::MAX as u64) as u32);
                    }
                    EventKind::Accepted => p.accepted = true,
                    EventKind::Rejected => p.rejected = true,
                    EventKind::Canceled => p.explicit_cancel = true,
                    EventKind::StillInCode => {
                        let retained = ev.payload_bool(payload_keys::RETAINED).or_else(|| {
                            let region = ev.payload_str(payload_keys::REGION)?;
                            let suggestion = p.request.suggestion.as_deref()?;
                            distance::retention_check(suggestion, region).ok()
                        });
                        if let Some(retained) = retained {
                            p.last_probe_retained = Some(retained);
                        }
                    }
                    EventKind::RequestIssued => unreachable!(),
                }
            }
        }
    }

    (pending.into_iter().map(PendingRequest::finalize).collect(), orphans)
}

/// Fallback target for events that carry no request id: the most recent
/// request in a state the event kind can apply to.
fn default_target(pending: &[PendingRequest], kind: EventKind) -> Option<usize> {
    let applicable = |p: &PendingRequest| match kind {
        EventKind::GenerationShown => !p.shown && !p.explicit_cancel,
        EventKind::Accepted | EventKind::Rejected => p.shown && !p.accepted && !p.rejected,
        EventKind::Canceled => !p.explicit_cancel,
        EventKind::StillInCode => p.accepted,
        EventKind::RequestIssued => false,
    };
    pending.iter().rposition(applicable)
}

/// Counts of requests per terminal outcome.
///
/// `accepted` counts requests accepted but not kept; use
/// [`LifecycleBreakdown::accepted_cumulative`] for the cumulative accept
/// tier (accepted + kept).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LifecycleBreakdown {
    pub total: usize,
    pub canceled: usize,
    pub empty: usize,
    pub displayed_rejected: usize,
    pub accepted: usize,
    pub kept: usize,
}

impl LifecycleBreakdown {
    pub fn count(&self, outcome: RequestOutcome) -> usize {
        match outcome {
            RequestOutcome::Canceled => self.canceled,
            RequestOutcome::Empty => self.empty,
            RequestOutcome::DisplayedRejected => self.displayed_rejected,
            RequestOutcome::Accepted => self.accepted,
            RequestOutcome::Kept => self.kept,
        }
    }

    /// Requests that finished generating and were displayed.
    pub fn displayed_cumulative(&self) -> usize {
        self.displayed_rejected + self.accepted + self.kept
    }

    /// Requests the developer accepted, whether or not they were kept.
    pub fn accepted_cumulative(&self) -> usize {
        self.accepted + self.kept
    }

    /// Percentage of total, 0.0 when the breakdown is empty.
    pub fn percent(&self, count: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            count as f64 * 100.0 / self.total as f64
        }
    }
}

/// Tallies terminal outcomes across sessions.
pub fn lifecycle_stats<'a>(
    sessions: impl IntoIterator<Item = &'a DeveloperSession>,
) -> LifecycleBreakdown {
    let mut b = LifecycleBreakdown::default();
    for session in sessions {
        for request in &session.requests {
            b.total += 1;
            match request.outcome {
                RequestOutcome::Canceled => b.canceled += 1,
                RequestOutcome::Empty => b.empty += 1,
                RequestOutcome::DisplayedRejected => b.displayed_rejected += 1,
                RequestOutcome::Accepted => b.accepted += 1,
                RequestOutcome::Kept => b.kept += 1,
            }
        }
    }
    b
}

/// Per-session activity rates and accept ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageStats {
    pub developer_id: String,
    pub requests: usize,
    pub requests_per_minute: f64,
    /// Accepted over displayed; `None` when nothing was displayed.
    pub accepted_to_shown: Option<f64>,
    /// Accepted over all requests; 0.0 for an empty session.
    pub accepted_to_total: f64,
}

/// Computes request rate and accept ratios for one session.
///
/// Accepted counts are cumulative (kept suggestions were accepted too).
pub fn usage_stats(session: &DeveloperSession) -> Result<UsageStats> {
    if session.session_duration_ms == 0 {
        return Err(Error::ZeroDurationSession(session.developer_id.clone()));
    }
    let total = session.requests.len();
    let shown = session.requests.iter().filter(|r| r.outcome.was_displayed()).count();
    let accepted = session.requests.iter().filter(|r| r.outcome.was_accepted()).count();
    let minutes = session.session_duration_ms as f64 / 60_000.0;
    Ok(UsageStats {
        developer_id: session.developer_id.clone(),
        requests: total,
        requests_per_minute: total as f64 / minutes,
        accepted_to_shown: (shown > 0).then(|| accepted as f64 / shown as f64),
        accepted_to_total: if total == 0 { 0.0 } else { accepted as f64 / total as f64 },
    })
}
