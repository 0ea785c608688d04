//! JSON control messages and replies.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A client request. `seq` is echoed in the acknowledgement.
#[derive(Debug, Clone, Deserialize)]
pub struct Envelope {
    #[serde(default)]
    pub seq: Option<u64>,
    #[serde(flatten)]
    pub message: ClientMessage,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    SetParam {
        name: String,
        value: Value,
    },
    Implode {
        factor: f64,
    },
    Pause,
    Resume,
    Load {
        path: String,
    },
    /// Rows of HD features.
    AddPoints {
        payload: Vec<Vec<f64>>,
    },
    /// Slot indices.
    RemovePoints {
        payload: Vec<usize>,
    },
    Snapshot,
}

impl ClientMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ClientMessage::SetParam { .. } => "set_param",
            ClientMessage::Implode { .. } => "implode",
            ClientMessage::Pause => "pause",
            ClientMessage::Resume => "resume",
            ClientMessage::Load { .. } => "load",
            ClientMessage::AddPoints { .. } => "add_points",
            ClientMessage::RemovePoints { .. } => "remove_points",
            ClientMessage::Snapshot => "snapshot",
        }
    }
}

pub const MESSAGE_TYPES: [&str; 8] = [
    "set_param",
    "implode",
    "pause",
    "resume",
    "load",
    "add_points",
    "remove_points",
    "snapshot",
];

/// Machine-readable failure causes.
pub mod reason {
    pub const MALFORMED: &str = "malformed";
    pub const UNKNOWN_TYPE: &str = "unknown_type";
    pub const UNKNOWN_PARAM: &str = "unknown_param";
    pub const INVALID_VALUE: &str = "invalid_value";
    pub const LOAD_FAILED: &str = "load_failed";
    pub const UNAVAILABLE: &str = "unavailable";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    #[serde(rename = "type")]
    pub kind: String,
    /// Type of the acknowledged message, when it could be parsed.
    pub ack: Option<String>,
    pub seq: Option<u64>,
    pub ok: bool,
    /// Iteration counter at the boundary where the message was applied.
    pub iteration: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
}

impl Ack {
    pub fn ok(ack: &str, iteration: u64) -> Self {
        Ack {
            kind: "ack".into(),
            ack: Some(ack.into()),
            seq: None,
            ok: true,
            iteration,
            reason: None,
            message: None,
            data: None,
        }
    }

    pub fn fail(ack: Option<&str>, iteration: u64, reason: &str, message: impl Into<String>) -> Self {
        Ack {
            ok: false,
            ack: ack.map(Into::into),
            reason: Some(reason.into()),
            message: Some(message.into()),
            ..Ack::ok("", iteration)
        }
    }

    pub fn with_data(mut self, data: Value) -> Self {
        self.data = Some(data);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusFrame {
    #[serde(rename = "type")]
    pub kind: String,
    pub iteration: u64,
    pub iterations_per_sec: f64,
    pub fraction_new: f64,
    pub paused: bool,
    pub n: usize,
    pub d: usize,
    pub params: serde_json::Map<String, Value>,
    pub view_dims: Option<[usize; 2]>,
    pub error: Option<String>,
}

/// Parses a text message, telling malformed JSON apart from unknown types.
pub fn parse(text: &str) -> Result<Envelope, (Option<u64>, &'static str, String)> {
    let raw: Value = serde_json::from_str(text).map_err(|e| (None, reason::MALFORMED, e.to_string()))?;
    let seq = raw.get("seq").and_then(Value::as_u64);
    match raw.get("type").and_then(Value::as_str) {
        None => return Err((seq, reason::MALFORMED, "missing \"type\"".into())),
        Some(t) if !MESSAGE_TYPES.contains(&t) => {
            return Err((seq, reason::UNKNOWN_TYPE, format!("unknown message type {t:?}")))
        }
        Some(_) => {}
    }
    serde_json::from_value(raw).map_err(|e| (seq, reason::MALFORMED, e.to_string()))
}
