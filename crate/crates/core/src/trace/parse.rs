//! JSON-lines trace ingestion and serialization.
//!
//! The canonical line format is one [`TelemetryEvent`] object per line.
//! Foreign datasets with different field names map onto the canonical model
//! through a [`SchemaMap`] loaded from TOML.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{reconstruct_requests, DeveloperSession, EventKind, TelemetryEvent};
use crate::error::{Error, Result};

/// Outcome of parsing one trace stream.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParseReport {
    pub events: usize,
    pub developers: usize,
    /// 1-based line numbers that failed to parse, with the failure detail.
    pub malformed: Vec<(usize, String)>,
    /// Non-issue events that matched no request, per developer.
    pub orphan_events: usize,
}

/// Parsed dataset: per-developer sessions plus the parse report.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sessions: Vec<DeveloperSession>,
    pub events: Vec<TelemetryEvent>,
    pub report: ParseReport,
}

impl Dataset {
    pub fn total_requests(&self) -> usize {
        self.sessions.iter().map(|s| s.requests.len()).sum()
    }
}

/// Field-name mapping from a foreign telemetry schema onto the canonical one.
///
/// `kind_values` maps the foreign dataset's event-type strings to canonical
/// [`EventKind`] names; unmapped types make the line malformed. Fields not
/// listed in `payload_fields` are preserved verbatim in the payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaMap {
    pub event_id_field: String,
    pub developer_id_field: String,
    pub timestamp_field: String,
    /// Unit of the timestamp field: "ms" or "s".
    #[serde(default = "default_timestamp_unit")]
    pub timestamp_unit: String,
    pub kind_field: String,
    pub kind_values: BTreeMap<String, String>,
    /// Foreign payload field -> canonical payload key.
    #[serde(default)]
    pub payload_fields: BTreeMap<String, String>,
}

fn default_timestamp_unit() -> String {
    "ms".to_string()
}

impl SchemaMap {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("schema map: {e}")))
    }

    fn apply(&self, value: &serde_json::Value, line: usize) -> Result<TelemetryEvent> {
        let obj = value
            .as_object()
            .ok_or_else(|| malformed(line, "event is not a JSON object"))?;
        let get_str = |field: &str| -> Result<String> {
            match obj.get(field) {
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(v) => Ok(v.to_string()),
                None => Err(malformed(line, &format!("missing field {field:?}"))),
            }
        };
        let kind_raw = get_str(&self.kind_field)?;
        let kind_name = self
            .kind_values
            .get(&kind_raw)
            .ok_or_else(|| malformed(line, &format!("unmapped event type {kind_raw:?}")))?;
        let kind = parse_kind(kind_name)
            .ok_or_else(|| malformed(line, &format!("unknown canonical kind {kind_name:?}")))?;
        let ts_raw = obj
            .get(&self.timestamp_field)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| malformed(line, "missing or non-numeric timestamp"))?;
        if ts_raw < 0.0 {
            return Err(malformed(line, "negative timestamp"));
        }
        let timestamp_ms = match self.timestamp_unit.as_str() {
            "ms" => ts_raw as u64,
            "s" => (ts_raw * 1_000.0) as u64,
            unit => return Err(Error::InvalidConfig(format!("unknown timestamp unit {unit:?}"))),
        };
        let mut payload = serde_json::Map::new();
        for (key, value) in obj {
            if key == &self.event_id_field
                || key == &self.developer_id_field
                || key == &self.timestamp_field
                || key == &self.kind_field
            {
                continue;
            }
            let canonical = self.payload_fields.get(key).cloned().unwrap_or_else(|| key.clone());
            payload.insert(canonical, value.clone());
        }
        Ok(TelemetryEvent {
            event_id: get_str(&self.event_id_field)?,
            developer_id: get_str(&self.developer_id_field)?,
            timestamp_ms,
            kind,
            payload,
        })
    }
}

fn parse_kind(name: &str) -> Option<EventKind> {
    EventKind::ALL.into_iter().find(|k| k.name() == name)
}

fn malformed(line: usize, detail: &str) -> Error {
    Error::Format { path: format!("line {line}"), detail: detail.to_string() }
}

/// Parses canonical JSON-lines telemetry from a reader.
///
/// Malformed lines are recorded in the report and skipped; an input with no
/// valid events at all is an error.
pub fn parse_dataset(reader: impl BufRead) -> Result<Dataset> {
    parse_with(reader, None)
}

/// Parses JSON-lines telemetry in a foreign schema.
pub fn parse_dataset_with(reader: impl BufRead, schema: &SchemaMap) -> Result<Dataset> {
    parse_with(reader, Some(schema))
}

/// Reads a trace file, selecting the schema-mapped path when a map is given.
pub fn parse_dataset_path(path: &Path, schema: Option<&SchemaMap>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    parse_with(reader, schema)
}

fn parse_with(reader: impl BufRead, schema: Option<&SchemaMap>) -> Result<Dataset> {
    let mut events = Vec::new();
    let mut report = ParseReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<TelemetryEvent, String> = match schema {
            None => serde_json::from_str(&line).map_err(|e| e.to_string()),
            Some(map) => serde_json::from_str::<serde_json::Value>(&line)
                .map_err(|e| e.to_string())
                .and_then(|v| map.apply(&v, lineno).map_err(|e| e.to_string())),
        };
        match parsed {
            Ok(event) => events.push(event),
            Err(detail) => report.malformed.push((lineno, detail)),
        }
    }
    if events.is_empty() {
        return Err(Error::EmptyDataset);
    }
    report.events = events.len();
    let sessions = assemble_sessions(&events, &mut report);
    report.developers = sessions.len();
    Ok(Dataset { sessions, events, report })
}

/// Groups events by developer, orders each group by `(timestamp, event_id)`,
/// and reconstructs requests.
pub fn assemble_sessions(
    events: &[TelemetryEvent],
    report: &mut ParseReport,
) -> Vec<DeveloperSession> {
    let mut by_dev: BTreeMap<&str, Vec<&TelemetryEvent>> = BTreeMap::new();
    for ev in events {
        by_dev.entry(&ev.developer_id).or_default().push(ev);
    }
    let mut sessions = Vec::with_capacity(by_dev.len());
    for (developer_id, mut dev_events) in by_dev {
        dev_events.sort_by(|a, b| {
            a.timestamp_ms.cmp(&b.timestamp_ms).then_with(|| a.event_id.cmp(&b.event_id))
        });
        let ordered: Vec<TelemetryEvent> = dev_events.iter().map(|e| (*e).clone()).collect();
        let (requests, orphans) = reconstruct_requests(developer_id, &ordered);
        report.orphan_events += orphans.len();
        sessions.push(DeveloperSession {
            developer_id: developer_id.to_string(),
            requests,
            session_duration_ms: session_duration(&ordered),
        });
    }
    sessions
}

/// Session duration from event timestamps.
///
/// The last event's timestamp bounds the session; a session whose final event
/// is an unresolved issue still gets a nonzero tail so the request exists
/// inside the session interval.
pub fn session_duration(ordered_events: &[TelemetryEvent]) -> u64 {
    let max_ts = ordered_events.iter().map(|e| e.timestamp_ms).max().unwrap_or(0);
    let max_issue = ordered_events
        .iter()
        .filter(|e| e.kind == EventKind::RequestIssued)
        .map(|e| e.timestamp_ms)
        .max();
    match max_issue {
        Some(issue) if issue >= max_ts => issue + 1,
        _ => max_ts,
    }
}

/// Writes events back out as canonical JSON lines.
pub fn serialize_events(events: &[TelemetryEvent], mut out: impl std::io::Write) -> Result<()> {
    for ev in events {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
