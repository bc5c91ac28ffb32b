//! Seeded synthetic trace generation for demos and tests.
//!
//! Generated sessions mimic observed assistant telemetry: a few requests per
//! minute per developer, most of them canceled mid-flight, a minority shown,
//! and a small tail accepted or kept.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{EventKind, RequestOutcome, TelemetryEvent};

/// Relative frequency of each terminal outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeWeights {
    pub canceled: f64,
    pub empty: f64,
    pub displayed_rejected: f64,
    pub accepted: f64,
    pub kept: f64,
}

impl Default for OutcomeWeights {
    fn default() -> Self {
        // Roughly: 30% of requests reach the editor, 11% get accepted,
        // 8.5% survive in the code.
        OutcomeWeights {
            canceled: 54.0,
            empty: 16.0,
            displayed_rejected: 19.0,
            accepted: 2.5,
            kept: 8.5,
        }
    }
}

/// Parameters of a synthetic trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub developers: usize,
    /// Mean session length; each developer gets a +/-40% jitter around it.
    pub session_minutes: f64,
    /// Per-developer request rate is drawn uniformly from this range.
    pub requests_per_minute: (f64, f64),
    pub outcome_weights: OutcomeWeights,
    pub mean_suggestion_tokens: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            developers: 8,
            session_minutes: 45.0,
            requests_per_minute: (1.9, 14.7),
            outcome_weights: OutcomeWeights::default(),
            mean_suggestion_tokens: 50.0,
        }
    }
}

const PROMPTS: &[&str] = &[
    "def load_config(path):",
    "fn parse_header(buf: &[u8]) -> Result<Header> {",
    "class RequestRouter:",
    "for (const item of queue) {",
    "SELECT developer_id, COUNT(*) FROM events",
    "if err != nil {",
    "impl Display for Duration {",
    "async function fetchMetrics(url) {",
];

const SUGGESTIONS: &[&str] = &[
    "return json.load(open(path))",
    "let len = u32::from_be_bytes(buf[..4].try_into()?) as usize;",
    "self.routes = {}\n        self.default_handler = None",
    "await handler(item); processed += 1;",
    "GROUP BY developer_id ORDER BY COUNT(*) DESC;",
    "return fmt.Errorf(\"read config: %w\", err)",
    "write!(f, \"{}ms\", self.as_millis())",
    "const res = await fetch(url); return res.json();",
];

/// Generates a deterministic synthetic trace.
///
/// The same `(config, seed)` pair always yields byte-identical events.
pub fn generate(config: &SyntheticConfig, seed: u64) -> Vec<TelemetryEvent> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let w = &config.outcome_weights;
    let outcome_dist = WeightedIndex::new([
        w.canceled,
        w.empty,
        w.displayed_rejected,
        w.accepted,
        w.kept,
    ])
    .expect("outcome weights must be non-negative and not all zero");

    let mut events = Vec::new();
    for dev in 0..config.developers {
        let developer_id = format!("dev{dev:03}");
        let session_ms =
            (config.session_minutes * 60_000.0 * rng.random_range(0.6..1.4)).max(60_000.0);
        let rate = rng.random_range(config.requests_per_minute.0..=config.requests_per_minute.1);
        let mean_gap_ms = 60_000.0 / rate;

        let mut t = exp_sample(&mut rng, mean_gap_ms);
        let mut n = 0usize;
        let mut counter = 0usize;
        let mut push = |kind: EventKind,
                        ts: f64,
                        payload: serde_json::Map<String, serde_json::Value>| {
            counter += 1;
            events.push(TelemetryEvent {
                event_id: format!("{developer_id}-e{counter:05}"),
                developer_id: developer_id.clone(),
                timestamp_ms: ts as u64,
                kind,
                payload,
            });
        };

        while t < session_ms {
            n += 1;
            let request_id = format!("{developer_id}-r{n:04}");
            let outcome = RequestOutcome::ALL[outcome_dist.sample(&mut rng)];
            let prompt = PROMPTS[rng.random_range(0..PROMPTS.len())];
            let mut issue = serde_json::Map::new();
            issue.insert("request_id".into(), request_id.clone().into());
            issue.insert("prompt".into(), format!("{prompt} /* {request_id} */").into());
            issue.insert("max_new_tokens".into(), 256u32.into());
            push(EventKind::RequestIssued, t, issue);

            let latency = rng.random_range(250.0..1_800.0);
            match outcome {
                RequestOutcome::Canceled => {
                    // Half cancel explicitly; the rest are superseded by the
                    // next request or left dangling at session end.
                    if rng.random_bool(0.5) {
                        let mut p = serde_json::Map::new();
                        p.insert("request_id".into(), request_id.clone().into());
                        push(EventKind::Canceled, t + rng.random_range(80.0..latency), p);
                    }
                }
                RequestOutcome::Empty => {
                    let mut p = serde_json::Map::new();
                    p.insert("request_id".into(), request_id.clone().into());
                    p.insert("suggestion".into(), "".into());
                    p.insert("tokens".into(), 0u32.into());
                    push(EventKind::GenerationShown, t + latency, p);
                }
                RequestOutcome::DisplayedRejected
                | RequestOutcome::Accepted
                | RequestOutcome::Kept => {
                    let text = SUGGESTIONS[rng.random_range(0..SUGGESTIONS.len())];
                    let tokens = (config.mean_suggestion_tokens * rng.random_range(0.4..1.6))
                        .round()
                        .max(1.0) as u32;
                    let mut p = serde_json::Map::new();
                    p.insert("request_id".into(), request_id.clone().into());
                    p.insert("suggestion".into(), text.into());
                    p.insert("tokens".into(), tokens.into());
                    push(EventKind::GenerationShown, t + latency, p);

                    let mut link = serde_json::Map::new();
                    link.insert("request_id".into(), request_id.clone().into());
                    if outcome == RequestOutcome::DisplayedRejected {
                        push(EventKind::Rejected, t + latency + rng.random_range(300.0..3_000.0), link);
                    } else {
                        let accept_at = t + latency + rng.random_range(500.0..4_000.0);
                        push(EventKind::Accepted, accept_at, link);
                        let mut probe = serde_json::Map::new();
                        probe.insert("request_id".into(), request_id.clone().into());
                        probe.insert(
                            "retained".into(),
                            (outcome == RequestOutcome::Kept).into(),
                        );
                        push(
                            EventKind::StillInCode,
                            accept_at + rng.random_range(20_000.0..120_000.0),
                            probe,
                        );
                    }
                }
            }
            t += exp_sample(&mut rng, mean_gap_ms);
        }
    }
    events.sort_by(|a, b| {
        a.developer_id
            .cmp(&b.developer_id)
            .then(a.timestamp_ms.cmp(&b.timestamp_ms))
            .then_with(|| a.event_id.cmp(&b.event_id))
    });
    events
}

/// Exponential inter-arrival sample with the given mean, in milliseconds.
fn exp_sample(rng: &mut impl Rng, mean_ms: f64) -> f64 {
    let u: f64 = rng.random_range(0.0..1.0);
    -mean_ms * (1.0 - u).ln()
}
