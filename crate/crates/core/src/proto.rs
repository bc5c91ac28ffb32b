//! Generation wire protocol.
//!
//! POST `/v1/generate` with `{"prompt", "max_new_tokens", "stream"}`.
//! With `stream=false` the server answers one JSON body `{"text", "tokens"}`.
//! With `stream=true` it answers server-sent events: one JSON token frame
//! per event, terminated by `{"done": true, "tokens": n}`. Overload is
//! HTTP 429 with `{"error": "overloaded"}`. GET `/v1/power` reports
//! `{"watts": f}`. Client cancellation is closing the connection.

use serde::{Deserialize, Serialize};

pub const GENERATE_PATH: &str = "/v1/generate";
pub const POWER_PATH: &str = "/v1/power";
pub const OVERLOADED_ERROR: &str = "overloaded";

/// Body of POST /v1/generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub stream: bool,
}

/// Non-streaming response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalBody {
    pub text: String,
    pub tokens: u32,
}

/// HTTP 429 body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl ErrorBody {
    pub fn overloaded() -> Self {
        ErrorBody { error: OVERLOADED_ERROR.to_string() }
    }
}

/// Body of GET /v1/power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBody {
    pub watts: f64,
}

/// One frame of a streaming response.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamFrame {
    Token { token: String, index: u32 },
    Done { tokens: u32 },
}

#[derive(Serialize, Deserialize)]
struct TokenFrameWire {
    token: String,
    index: u32,
}

#[derive(Serialize, Deserialize)]
struct DoneFrameWire {
    done: bool,
    tokens: u32,
}

impl StreamFrame {
    pub fn to_json(&self) -> String {
        match self {
            StreamFrame::Token { token, index } => serde_json::to_string(&TokenFrameWire {
                token: token.clone(),
                index: *index,
            })
            .expect("frame serializes"),
            StreamFrame::Done { tokens } => {
                serde_json::to_string(&DoneFrameWire { done: true, tokens: *tokens })
                    .expect("frame serializes")
            }
        }
    }

    pub fn from_json(text: &str) -> crate::error::Result<StreamFrame> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("done").and_then(|d| d.as_bool()) == Some(true) {
            let wire: DoneFrameWire = serde_json::from_value(value)?;
            return Ok(StreamFrame::Done { tokens: wire.tokens });
        }
        let wire: TokenFrameWire = serde_json::from_value(value)?;
        Ok(StreamFrame::Token { token: wire.token, index: wire.index })
    }

    /// Encodes the frame as one server-sent event.
    pub fn to_sse(&self) -> String {
        format!("data: {}\n\n", self.to_json())
    }
}

/// Placeholder token text; the mock generates no real language.
pub fn placeholder_token(index: u32) -> String {
    format!("tok{index} ")
}

/// Concatenated placeholder text for a completed generation.
pub fn placeholder_text(tokens: u32) -> String {
    (1..=tokens).map(placeholder_token).collect()
}

/// Extracts complete `data:` events from an SSE buffer, returning the events
/// and the unconsumed tail.
pub fn split_sse_events(buffer: &str) -> (Vec<&str>, &str) {
    let mut events = Vec::new();
    let mut rest = buffer;
    while let Some(pos) = rest.find("\n\n") {
        let (event, tail) = rest.split_at(pos);
        if let Some(data) = event.strip_prefix("data: ") {
            events.push(data);
        }
        rest = &tail[2..];
    }
    (events, rest)
}
