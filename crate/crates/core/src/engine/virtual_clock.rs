//! Deterministic virtual-time executor.
//!
//! One single-threaded event loop interleaves request fires, client
//! timeouts, and the simulator's step boundaries. Ties at equal times
//! resolve by kind (fire, then boundary, then timeout) and then by insertion
//! sequence, so a run is a pure function of (plan, settings, options).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use crate::config::StreamingMode;
use crate::error::Result;
use crate::metrics::{PowerSample, SampleSource};
use crate::plan::ReplayPlan;
use crate::sim::{Admission, BatchSim, SeqId, ServerSettings, StepRow};

use super::{ClockMode, EngineOptions, RawRunLog, RequestRecord, RequestStatus};

/// Output of one simulated round.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoundExecution {
    pub log: RawRunLog,
    pub samples: Vec<PowerSample>,
    pub step_rows: Vec<StepRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Fire(usize),
    Timeout { record_idx: usize, seq_id: SeqId },
}

/// Heap entry ordered by (time, kind priority, insertion sequence).
#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    priority: u8,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we pop the earliest event.
        other
            .time
            .total_cmp(&self.time)
            .then(other.priority.cmp(&self.priority))
            .then(other.seq.cmp(&self.seq))
    }
}

const PRIORITY_FIRE: u8 = 0;
const PRIORITY_BOUNDARY: u8 = 1;
const PRIORITY_TIMEOUT: u8 = 2;

/// Executes one round of the plan against a fresh simulator.
pub fn execute_round(
    plan: &ReplayPlan,
    round: u32,
    settings: &ServerSettings,
    options: &EngineOptions,
) -> Result<RoundExecution> {
    let requests: Vec<_> = plan.round_schedule(round).collect();
    let mut sim = BatchSim::new(settings.clone());
    let streaming = plan.config.streaming == StreamingMode::StreamWithCancel;

    let mut records: Vec<RequestRecord> = requests
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
    let mut terminal = vec![false; records.len()];

    let mut heap = BinaryHeap::new();
    let mut event_seq = 0u64;
    for (idx, req) in requests.iter().enumerate() {
        heap.push(Event {
            time: req.fire_offset_ms as f64,
            priority: PRIORITY_FIRE,
            seq: event_seq,
            kind: EventKind::Fire(idx),
        });
        event_seq += 1;
    }

    // Developer -> (record index, sequence id) of the in-flight request.
    let mut in_flight: BTreeMap<u32, (usize, SeqId)> = BTreeMap::new();
    let mut seq_to_record: BTreeMap<SeqId, usize> = BTreeMap::new();
    let mut next_seq: SeqId = 1;

    loop {
        let heap_head = heap.peek().map(|e| (e.time, e.priority));
        let boundary = sim.next_boundary().map(|t| (t, PRIORITY_BOUNDARY));
        let take_boundary = match (heap_head, boundary) {
            (None, None) => break,
            (None, Some(_)) => true,
            (Some(_), None) => false,
            (Some((ht, hp)), Some((bt, bp))) => {
                bt.total_cmp(&ht).then(bp.cmp(&hp)) == Ordering::Less
            }
        };

        if take_boundary {
            let outcome = sim.advance().expect("boundary exists");
            if streaming {
                for tok in &outcome.tokens {
                    if let Some(&ridx) = seq_to_record.get(&tok.id) {
                        records[ridx].tokens_generated = tok.token_index;
                    }
                }
            }
            for comp in &outcome.completions {
                if let Some(ridx) = seq_to_record.remove(&comp.id) {
                    let rec = &mut records[ridx];
                    rec.status = RequestStatus::Completed;
                    rec.completion_ms = Some(comp.finish_ms);
                    rec.tokens_generated = comp.tokens;
                    terminal[ridx] = true;
                    in_flight.retain(|_, &mut (i, _)| i != ridx);
                }
            }
            continue;
        }

        let event = heap.pop().expect("peeked");
        match event.kind {
            EventKind::Fire(idx) => {
                let req = requests[idx];
                let t = event.time;
                if req.cancels_previous {
                    if let Some((prev_idx, prev_seq)) = in_flight.remove(&req.virtual_developer_id)
                    {
                        sim.cancel(prev_seq);
                        seq_to_record.remove(&prev_seq);
                        let rec = &mut records[prev_idx];
                        rec.status = RequestStatus::Canceled;
                        rec.canceled_ms = Some(t);
                        terminal[prev_idx] = true;
                    }
                }
                let seq_id = next_seq;
                next_seq += 1;
                match sim.submit(t, seq_id, &req.prompt, req.max_new_tokens) {
                    Admission::Rejected => {
                        let rec = &mut records[idx];
                        rec.status = RequestStatus::RejectedByServer;
                        rec.completion_ms = Some(t);
                        terminal[idx] = true;
                    }
                    Admission::Accepted => {
                        seq_to_record.insert(seq_id, idx);
                        in_flight.insert(req.virtual_developer_id, (idx, seq_id));
                        heap.push(Event {
                            time: t + options.timeout_ms as f64,
                            priority: PRIORITY_TIMEOUT,
                            seq: event_seq,
                            kind: EventKind::Timeout { record_idx: idx, seq_id },
                        });
                        event_seq += 1;
                    }
                }
            }
            EventKind::Timeout { record_idx, seq_id } => {
                if terminal[record_idx] {
                    continue;
                }
                sim.cancel(seq_id);
                seq_to_record.remove(&seq_id);
                in_flight.retain(|_, &mut (i, _)| i != record_idx);
                let rec = &mut records[record_idx];
                rec.status = RequestStatus::TimedOut;
                rec.completion_ms = Some(event.time);
                terminal[record_idx] = true;
            }
        }
    }

    debug_assert!(terminal.iter().all(|&t| t), "every record must reach a terminal status");

    let run_end_ms = records
        .iter()
        .map(|r| r.terminal_ms())
        .fold(plan.window_ms as f64, f64::max)
        .max(sim.step_log().last().map_or(0.0, |s| s.start_ms + s.duration_ms));

    let interval = options.sample_interval_ms.unwrap_or(settings.sample_interval_ms);
    let samples = sample_step_log(sim.step_log(), settings, interval, run_end_ms);

    let log = RawRunLog {
        config: plan.config.clone(),
        seed: plan.seed,
        round,
        clock: ClockMode::Virtual,
        records,
        run_start_ms: 0.0,
        run_end_ms,
    };
    log.check_complete(requests.len())?;
    Ok(RoundExecution { log, samples, step_rows: sim.step_log().to_vec() })
}

/// Executes every round of the plan.
pub fn execute_plan(
    plan: &ReplayPlan,
    settings: &ServerSettings,
    options: &EngineOptions,
) -> Result<Vec<RoundExecution>> {
    (0..plan.rounds).map(|round| execute_round(plan, round, settings, options)).collect()
}

/// Reconstructs the simulated power meter from the step log: step watts
/// while a step runs, idle watts between steps, sampled on a fixed cadence.
fn sample_step_log(
    steps: &[StepRow],
    settings: &ServerSettings,
    interval_ms: u64,
    end_ms: f64,
) -> Vec<PowerSample> {
    let idle = settings.power_watts(0);
    let mut samples = Vec::new();
    let mut cursor = 0usize;
    let mut t = 0.0f64;
    while t <= end_ms {
        while cursor < steps.len() && steps[cursor].start_ms + steps[cursor].duration_ms <= t {
            cursor += 1;
        }
        let watts = match steps.get(cursor) {
            Some(step) if step.start_ms <= t => step.watts,
            _ => idle,
        };
        samples.push(PowerSample { timestamp_ms: t, watts, source: SampleSource::Simulated });
        t += interval_ms as f64;
    }
    samples
}
