//! Real-clock executor.
//!
//! Fires the scheduled requests over HTTP against a generation endpoint,
//! one tokio task per request, with per-developer cancellation (closing the
//! connection) and an optional power-sampling task polling the endpoint's
//! meter. Produces the same log shape as the virtual executor so the
//! analysis code is shared.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures_util::StreamExt;
use tokio::task::JoinHandle;
use tokio::time::Instant;

use crate::config::StreamingMode;
use crate::error::{Error, Result};
use crate::metrics::{PowerSample, SampleSource};
use crate::plan::{ReplayPlan, ScheduledRequest};
use crate::proto::{
    split_sse_events, FinalBody, GenerateRequest, PowerBody, StreamFrame, GENERATE_PATH,
    POWER_PATH,
};

use super::virtual_clock::RoundExecution;
use super::{ClockMode, EngineOptions, RawRunLog, RequestRecord, RequestStatus};

/// Power polling cadence when the caller does not override it.
pub const DEFAULT_LIVE_SAMPLE_INTERVAL_MS: u64 = 100;

struct RunState {
    records: Vec<RequestRecord>,
    terminal: Vec<bool>,
}

type SharedState = Arc<Mutex<RunState>>;

fn ms_since(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1_000.0
}

fn join_url(base: &str, path: &str) -> String {
    format!("{}{}", base.trim_end_matches('/'), path)
}

/// Checks that the endpoint is reachable and whether it exposes the power
/// meter route.
pub async fn probe_endpoint(client: &reqwest::Client, base_url: &str) -> Result<bool> {
    match client.get(join_url(base_url, POWER_PATH)).send().await {
        Ok(resp) if resp.status().is_success() => Ok(true),
        Ok(_) => Ok(false),
        Err(e) => Err(Error::EndpointUnreachable(format!("{base_url}: {e}"))),
    }
}

enum HttpOutcome {
    Completed(u32),
    /// 429, transport failure, or a malformed response.
    Rejected,
}

async fn perform_request(
    client: &reqwest::Client,
    url: &str,
    body: GenerateRequest,
    state: &SharedState,
    idx: usize,
) -> HttpOutcome {
    let streaming = body.stream;
    let resp = match client.post(url).json(&body).send().await {
        Ok(resp) => resp,
        Err(_) => return HttpOutcome::Rejected,
    };
    if !resp.status().is_success() {
        return HttpOutcome::Rejected;
    }
    if !streaming {
        return match resp.json::<FinalBody>().await {
            Ok(body) => HttpOutcome::Completed(body.tokens),
            Err(_) => HttpOutcome::Rejected,
        };
    }
    let mut buffer = String::new();
    let mut stream = resp.bytes_stream();
    while let Some(chunk) = stream.next().await {
        let Ok(chunk) = chunk else { return HttpOutcome::Rejected };
        buffer.push_str(&String::from_utf8_lossy(&chunk));
        let (events, rest) = {
            let (events, rest) = split_sse_events(&buffer);
            (events.iter().map(|e| e.to_string()).collect::<Vec<_>>(), rest.to_string())
        };
        buffer = rest;
        for event in events {
            match StreamFrame::from_json(&event) {
                Ok(StreamFrame::Token { index, .. }) => {
                    let mut run = state.lock().expect("state lock");
                    if !run.terminal[idx] {
                        run.records[idx].tokens_generated = index;
                    }
                }
                Ok(StreamFrame::Done { tokens }) => return HttpOutcome::Completed(tokens),
                Err(_) => return HttpOutcome::Rejected,
            }
        }
    }
    // Stream ended without a terminal frame.
    HttpOutcome::Rejected
}

#[allow(clippy::too_many_arguments)]
async fn run_request(
    client: reqwest::Client,
    url: String,
    request: ScheduledRequest,
    stream: bool,
    idx: usize,
    state: SharedState,
    t0: Instant,
    timeout_ms: u64,
) {
    let scheduled_ms = request.fire_offset_ms as f64;
    let now = ms_since(t0);
    {
        let mut run = state.lock().expect("state lock");
        run.records[idx].send_ms = now;
        run.records[idx].jitter_ms = (now - scheduled_ms).abs();
    }
    let body = GenerateRequest {
        prompt: request.prompt.clone(),
        max_new_tokens: request.max_new_tokens,
        stream,
    };
    let outcome = tokio::time::timeout(
        Duration::from_millis(timeout_ms),
        perform_request(&client, &url, body, &state, idx),
    )
    .await;
    let end = ms_since(t0);
    let mut run = state.lock().expect("state lock");
    if run.terminal[idx] {
        return; // canceled while the response was in flight
    }
    let record = &mut run.records[idx];
    record.completion_ms = Some(end);
    record.status = match outcome {
        Err(_elapsed) => RequestStatus::TimedOut,
        Ok(HttpOutcome::Completed(tokens)) => {
            record.tokens_generated = tokens;
            RequestStatus::Completed
        }
        Ok(HttpOutcome::Rejected) => RequestStatus::RejectedByServer,
    };
    run.terminal[idx] = true;
}

fn spawn_power_sampler(
    client: reqwest::Client,
    base_url: String,
    interval_ms: u64,
    t0: Instant,
    mut stop: tokio::sync::watch::Receiver<bool>,
) -> JoinHandle<Vec<PowerSample>> {
    tokio::spawn(async move {
        let url = join_url(&base_url, POWER_PATH);
        let mut samples = Vec::new();
        let mut ticker = tokio::time::interval(Duration::from_millis(interval_ms.max(1)));
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                _ = stop.changed() => break,
                _ = ticker.tick() => {
                    let t = ms_since(t0);
                    let Ok(resp) = client.get(&url).send().await else { continue };
                    let Ok(body) = resp.json::<PowerBody>().await else { continue };
                    samples.push(PowerSample {
                        timestamp_ms: t,
                        watts: body.watts,
                        source: SampleSource::Simulated,
                    });
                }
            }
        }
        samples
    })
}

/// Executes one round of the plan against a live endpoint.
pub async fn execute_round_live(
    plan: &ReplayPlan,
    round: u32,
    base_url: &str,
    options: &EngineOptions,
) -> Result<RoundExecution> {
    let requests: Vec<ScheduledRequest> =
        plan.round_schedule(round).cloned().collect();
    let streaming = plan.config.streaming == StreamingMode::StreamWithCancel;
    let client = reqwest::Client::builder()
        .build()
        .map_err(|e| Error::EndpointUnreachable(e.to_string()))?;
    let has_power_meter = probe_endpoint(&client, base_url).await?;

    let records: Vec<RequestRecord> = requests
        .iter()
        .map(|req| RequestRecord {
            round,
            virtual_developer_id: req.virtual_developer_id,
            source_request_id: req.source_request_id.clone(),
            fire_offset_ms: req.fire_offset_ms,
            send_ms: req.fire_offset_ms as f64,
            completion_ms: None,
            canceled_ms: None,
            status: RequestStatus::Canceled,
            tokens_generated: 0,
            jitter_ms: 0.0,
        })
        .collect();
    let terminal = vec![false; records.len()];
    let state: SharedState = Arc::new(Mutex::new(RunState { records, terminal }));

    let t0 = Instant::now();
    let (stop_tx, stop_rx) = tokio::sync::watch::channel(false);
    let sampler = has_power_meter.then(|| {
        let interval =
            options.sample_interval_ms.unwrap_or(DEFAULT_LIVE_SAMPLE_INTERVAL_MS);
        spawn_power_sampler(client.clone(), base_url.to_string(), interval, t0, stop_rx)
    });

    let url = join_url(base_url, GENERATE_PATH);
    let mut in_flight: BTreeMap<u32, (usize, JoinHandle<()>)> = BTreeMap::new();
    let mut handles: Vec<JoinHandle<()>> = Vec::new();
    for (idx, request) in requests.iter().enumerate() {
        tokio::time::sleep_until(t0 + Duration::from_millis(request.fire_offset_ms)).await;
        if request.cancels_previous {
            if let Some((prev_idx, prev_handle)) =
                in_flight.remove(&request.virtual_developer_id)
            {
                let now = ms_since(t0);
                let was_live = {
                    let mut run = state.lock().expect("state lock");
                    if run.terminal[prev_idx] {
                        false
                    } else {
                        run.terminal[prev_idx] = true;
                        run.records[prev_idx].status = RequestStatus::Canceled;
                        run.records[prev_idx].canceled_ms = Some(now);
                        true
                    }
                };
                if was_live {
                    // Dropping the request future closes the connection.
                    prev_handle.abort();
                }
            }
        }
        let handle = tokio::spawn(run_request(
            client.clone(),
            url.clone(),
            request.clone(),
            streaming,
            idx,
            Arc::clone(&state),
            t0,
            options.timeout_ms,
        ));
        if streaming {
            // Track the in-flight request so a later fire can cancel it. The
            // map is only consulted for cancellation, which only the
            // streaming mode performs.
            if let Some((_, stale)) = in_flight.insert(
                request.virtual_developer_id,
                (idx, handle),
            ) {
                handles.push(stale);
            }
        } else {
            handles.push(handle);
        }
    }
    handles.extend(in_flight.into_values().map(|(_, h)| h));
    for handle in handles {
        // Aborted tasks return a JoinError; their records were already
        // finalized by the canceling fire.
        let _ = handle.await;
    }

    let _ = stop_tx.send(true);
    let samples = match sampler {
        Some(handle) => handle.await.unwrap_or_default(),
        None => Vec::new(),
    };

    let mut run = Arc::try_unwrap(state)
        .map_err(|_| Error::InvalidConfig("request tasks still hold the run state".into()))?
        .into_inner()
        .expect("state lock");
    let shutdown_ms = ms_since(t0);
    for (idx, done) in run.terminal.iter().enumerate() {
        if !done {
            run.records[idx].status = RequestStatus::Canceled;
            run.records[idx].canceled_ms = Some(shutdown_ms);
        }
    }

    let run_end_ms = run
        .records
        .iter()
        .map(|r| r.terminal_ms())
        .chain(samples.iter().map(|s| s.timestamp_ms))
        .fold(0.0f64, f64::max);
    let log = RawRunLog {
        config: plan.config.clone(),
        seed: plan.seed,
        round,
        clock: ClockMode::Real,
        records: run.records,
        run_start_ms: 0.0,
        run_end_ms,
    };
    log.check_complete(requests.len())?;
    Ok(RoundExecution { log, samples, step_rows: Vec::new() })
}

/// Executes every round of the plan sequentially against a live endpoint.
pub async fn execute_plan_live(
    plan: &ReplayPlan,
    base_url: &str,
    options: &EngineOptions,
) -> Result<Vec<RoundExecution>> {
    let mut rounds = Vec::with_capacity(plan.rounds as usize);
    for round in 0..plan.rounds {
        rounds.push(execute_round_live(plan, round, base_url, options).await?);
    }
    Ok(rounds)
}
