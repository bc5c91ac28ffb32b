//! Continuous-batching inference server simulator.
//!
//! The simulator is a discrete-event loop over batching step boundaries.
//! Admission control caps queued plus running requests; admitted sequences
//! join the batch at the next step boundary; every step emits one token per
//! running sequence and costs `decode_base + decode_slope * batch_size`
//! (plus a prefill surcharge for entering sequences, floored at the step
//! quantum). Power follows batch utilization. All state changes are pure
//! functions of the submit/cancel call sequence, so virtual-time runs are
//! bit-reproducible.

pub mod profile;

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

pub use profile::{ModelProfile, ProfilesFile, QuantizationSpec, ServerSettings};

pub type SeqId = u64;

/// Admission decision for a submitted request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Accepted,
    /// Admission cap reached; the server answers 429.
    Rejected,
}

/// One token handed to a client at a step boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenEmission {
    pub id: SeqId,
    /// 1-based index of the token within its sequence.
    pub token_index: u32,
}

/// A sequence that reached its target length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeqCompletion {
    pub id: SeqId,
    pub tokens: u32,
    pub finish_ms: f64,
}

/// Everything that happened at one step boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryOutcome {
    pub time_ms: f64,
    pub tokens: Vec<TokenEmission>,
    pub completions: Vec<SeqCompletion>,
}

/// One row of the server step log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub start_ms: f64,
    pub duration_ms: f64,
    pub batch_size: u32,
    pub queue_depth: u32,
    pub watts: f64,
}

#[derive(Debug, Clone)]
struct QueuedSeq {
    id: SeqId,
    prompt_tokens: u32,
    target_tokens: u32,
}

#[derive(Debug, Clone)]
struct RunningSeq {
    id: SeqId,
    emitted: u32,
    target_tokens: u32,
}

/// Discrete-event state of the batching server.
#[derive(Debug, Clone)]
pub struct BatchSim {
    settings: ServerSettings,
    queue: VecDeque<QueuedSeq>,
    running: Vec<RunningSeq>,
    canceled: BTreeSet<SeqId>,
    /// End of the in-progress step; `None` while idle.
    boundary_ms: Option<f64>,
    step_log: Vec<StepRow>,
    rejected_total: u64,
    admitted_total: u64,
}

/// Crude but deterministic prompt token estimate (about 4 bytes per token).
pub fn estimate_prompt_tokens(prompt: &str) -> u32 {
    (prompt.len() as u32).div_ceil(4)
}

impl BatchSim {
    pub fn new(settings: ServerSettings) -> Self {
        BatchSim {
            settings,
            queue: VecDeque::new(),
            running: Vec::new(),
            canceled: BTreeSet::new(),
            boundary_ms: None,
            step_log: Vec::new(),
            rejected_total: 0,
            admitted_total: 0,
        }
    }

    pub fn settings(&self) -> &ServerSettings {
        &self.settings
    }

    /// Queued plus running requests, the quantity the admission cap limits.
    pub fn admitted_count(&self) -> u32 {
        (self.queue.len() + self.running.len()) as u32
    }

    pub fn rejected_total(&self) -> u64 {
        self.rejected_total
    }

    pub fn admitted_total(&self) -> u64 {
        self.admitted_total
    }

    pub fn is_idle(&self) -> bool {
        self.boundary_ms.is_none()
    }

    /// Time of the next step boundary, if a step is in progress.
    pub fn next_boundary(&self) -> Option<f64> {
        self.boundary_ms
    }

    pub fn step_log(&self) -> &[StepRow] {
        &self.step_log
    }

    /// Instantaneous power: idle draw plus the utilization-scaled active term
    /// of the step in progress.
    pub fn power_now(&self) -> f64 {
        if self.boundary_ms.is_some() {
            self.settings.power_watts(self.running.len() as u32)
        } else {
            self.settings.power_watts(0)
        }
    }

    /// Submits a request at time `t`. The target output length is the seeded
    /// draw for `prompt`, capped by `max_new_tokens`.
    pub fn submit(&mut self, t: f64, id: SeqId, prompt: &str, max_new_tokens: u32) -> Admission {
        if self.admitted_count() >= self.settings.max_concurrent_requests {
            self.rejected_total += 1;
            return Admission::Rejected;
        }
        self.admitted_total += 1;
        self.queue.push_back(QueuedSeq {
            id,
            prompt_tokens: estimate_prompt_tokens(prompt),
            target_tokens: self.settings.output_tokens(prompt, max_new_tokens),
        });
        if self.boundary_ms.is_none() {
            // Idle server: the arrival itself opens a step.
            self.start_step(t);
        }
        Admission::Accepted
    }

    /// Requests removal of a queued or running sequence. Takes effect at the
    /// next step boundary; unknown or finished ids are a no-op.
    pub fn cancel(&mut self, id: SeqId) {
        let known = self.queue.iter().any(|q| q.id == id)
            || self.running.iter().any(|r| r.id == id);
        if known {
            self.canceled.insert(id);
        }
    }

    /// Processes the pending step boundary, if any.
    pub fn advance(&mut self) -> Option<BoundaryOutcome> {
        let t = self.boundary_ms?;
        let mut tokens = Vec::new();
        let mut completions = Vec::new();

        // Cancels arrived during the step: drop before token emission, so a
        // canceled sequence stops within one step of the cancel call.
        self.running.retain(|seq| !self.canceled.remove(&seq.id));
        for seq in &mut self.running {
            seq.emitted += 1;
            tokens.push(TokenEmission { id: seq.id, token_index: seq.emitted });
            if seq.emitted >= seq.target_tokens {
                completions.push(SeqCompletion {
                    id: seq.id,
                    tokens: seq.emitted,
                    finish_ms: t,
                });
            }
        }
        self.running.retain(|seq| seq.emitted < seq.target_tokens);

        self.boundary_ms = None;
        self.start_step(t);
        Some(BoundaryOutcome { time_ms: t, tokens, completions })
    }

    /// Processes every boundary at or before `t`, collecting the outcomes.
    pub fn advance_to(&mut self, t: f64) -> Vec<BoundaryOutcome> {
        let mut outcomes = Vec::new();
        while self.boundary_ms.is_some_and(|b| b <= t) {
            outcomes.extend(self.advance());
        }
        outcomes
    }

    /// Admits queued work into the batch and opens the next step at `t`.
    fn start_step(&mut self, t: f64) {
        debug_assert!(self.boundary_ms.is_none());
        // Queued cancels take effect here, before admission.
        self.queue.retain(|q| !self.canceled.remove(&q.id));

        let mut entering_prompt_tokens = 0u64;
        while self.running.len() < self.settings.running_capacity as usize {
            let Some(next) = self.queue.pop_front() else { break };
            entering_prompt_tokens += next.prompt_tokens as u64;
            self.running.push(RunningSeq {
                id: next.id,
                emitted: 0,
                target_tokens: next.target_tokens,
            });
        }
        if self.running.is_empty() {
            return;
        }
        let batch_size = self.running.len() as u32;
        let duration_ms = self.settings.step_duration_ms(batch_size, entering_prompt_tokens);
        self.step_log.push(StepRow {
            start_ms: t,
            duration_ms,
            batch_size,
            queue_depth: self.queue.len() as u32,
            watts: self.settings.power_watts(batch_size),
        });
        self.boundary_ms = Some(t + duration_ms);
    }

    /// Writes the step log as CSV.
    pub fn dump_step_log_csv(&self, out: impl std::io::Write) -> crate::error::Result<()> {
        write_step_rows_csv(&self.step_log, out)
    }
}

/// Writes a step log as CSV to any writer.
pub fn write_step_rows_csv(rows: &[StepRow], out: impl std::io::Write) -> crate::error::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| crate::error::Error::Store(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
