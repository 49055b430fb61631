//! Wire format. Over WebSocket, frames travel as binary messages made of a
//! fixed 48-byte little-endian header and raw 8-bit pixels; state, results
//! and errors travel as JSON text messages. `encode` also covers JSON kinds
//! with the same header, for logs and byte-level comparison.

use std::io::Read;

use serde::{Deserialize, Serialize};
use tungstenite::Message;

use super::ServiceError;

pub const MAGIC: [u8; 4] = *b"RVCS";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 48;
/// Upper bound on a payload; a 512×512 frame is 256 KiB.
pub const MAX_PAYLOAD: usize = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum MessageKind {
    FrameMicroscope = 1,
    FrameBScan = 2,
    FsmState = 3,
    TrialResult = 4,
    Error = 5,
    /// Full state document sent on connect; does not advance `seq`.
    Snapshot = 6,
}

impl MessageKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::FrameMicroscope,
            2 => Self::FrameBScan,
            3 => Self::FsmState,
            4 => Self::TrialResult,
            5 => Self::Error,
            6 => Self::Snapshot,
            _ => return None,
        })
    }

    pub fn is_frame(self) -> bool {
        matches!(self, Self::FrameMicroscope | Self::FrameBScan)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Frame { width: u32, height: u32, scale_mm_per_px: f64, pixels: Vec<u8> },
    Json(serde_json::Value),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerMessage {
    pub kind: MessageKind,
    pub seq: u64,
    /// Simulation time in seconds.
    pub t: f64,
    /// Messages skipped for this client since the previous one it received.
    pub dropped: u32,
    pub payload: Payload,
}

impl ServerMessage {
    pub fn json(kind: MessageKind, seq: u64, t: f64, body: serde_json::Value) -> Self {
        Self { kind, seq, t, dropped: 0, payload: Payload::Json(body) }
    }

    pub fn body(&self) -> Option<&serde_json::Value> {
        match &self.payload {
            Payload::Json(v) => Some(v),
            Payload::Frame { .. } => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let (width, height, scale, bytes) = match &self.payload {
            Payload::Frame { width, height, scale_mm_per_px, pixels } => (*width, *height, *scale_mm_per_px, pixels.clone()),
            Payload::Json(v) => (0, 0, 0.0, serde_json::to_vec(v).expect("json value serializes")),
        };
        let mut out = Vec::with_capacity(HEADER_LEN + bytes.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.kind as u8);
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&width.to_le_bytes());
        out.extend_from_slice(&height.to_le_bytes());
        out.extend_from_slice(&scale.to_le_bytes());
        out.extend_from_slice(&self.dropped.to_le_bytes());
        out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&bytes);
        out
    }

    /// Decode one message from the front of `buf`, returning it and the bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Self, usize), ServiceError> {
        if buf.len() < HEADER_LEN {
            return Err(ServiceError::Protocol(format!("need {HEADER_LEN} header bytes, have {}", buf.len())));
        }
        let header = Header::parse(buf[..HEADER_LEN].try_into().expect("length checked"))?;
        let end = HEADER_LEN + header.payload_len;
        if buf.len() < end {
            return Err(ServiceError::Protocol(format!("truncated payload: need {end} bytes, have {}", buf.len())));
        }
        Ok((header.into_message(&buf[HEADER_LEN..end])?, end))
    }

    /// Read exactly one message from a stream.
    pub fn read_from(r: &mut impl Read) -> Result<Self, ServiceError> {
        let mut head = [0u8; HEADER_LEN];
        r.read_exact(&mut head)?;
        let header = Header::parse(&head)?;
        let mut body = vec![0u8; header.payload_len];
        r.read_exact(&mut body)?;
        header.into_message(&body)
    }
}

/// Text-message form of a JSON-kind server message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonEnvelope {
    pub kind: MessageKind,
    pub seq: u64,
    pub t: f64,
    #[serde(default)]
    pub dropped: u32,
    pub body: serde_json::Value,
}

impl ServerMessage {
    pub fn to_ws(&self) -> Message {
        match &self.payload {
            Payload::Frame { .. } => Message::binary(self.encode()),
            Payload::Json(body) => {
                let env = JsonEnvelope { kind: self.kind, seq: self.seq, t: self.t, dropped: self.dropped, body: body.clone() };
                Message::text(serde_json::to_string(&env).expect("envelope serializes"))
            }
        }
    }

    /// Parse a WebSocket message; control messages yield `None`.
    pub fn from_ws(msg: &Message) -> Result<Option<Self>, ServiceError> {
        match msg {
            Message::Binary(b) => Ok(Some(Self::decode(b)?.0)),
            Message::Text(t) => {
                let env: JsonEnvelope =
                    serde_json::from_str(t.as_str()).map_err(|e| ServiceError::Protocol(format!("bad envelope: {e}")))?;
                if env.kind.is_frame() {
                    return Err(ServiceError::Protocol("frame kinds must be binary".into()));
                }
                Ok(Some(Self { kind: env.kind, seq: env.seq, t: env.t, dropped: env.dropped, payload: Payload::Json(env.body) }))
            }
            _ => Ok(None),
        }
    }
}

struct Header {
    kind: MessageKind,
    seq: u64,
    t: f64,
    width: u32,
    height: u32,
    scale: f64,
    dropped: u32,
    payload_len: usize,
}

impl Header {
    fn parse(b: &[u8; HEADER_LEN]) -> Result<Self, ServiceError> {
        if b[0..4] != MAGIC {
            return Err(ServiceError::Protocol("bad magic".into()));
        }
        if b[4] != VERSION {
            return Err(ServiceError::Protocol(format!("unsupported version {}", b[4])));
        }
        let kind = MessageKind::from_u8(b[5]).ok_or_else(|| ServiceError::Protocol(format!("unknown kind {}", b[5])))?;
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().expect("4 bytes"));
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().expect("8 bytes"));
        let payload_len = u32_at(44) as usize;
        if payload_len > MAX_PAYLOAD {
            return Err(ServiceError::Protocol(format!("payload of {payload_len} bytes exceeds limit")));
        }
        Ok(Self {
            kind,
            seq: u64_at(8),
            t: f64::from_bits(u64_at(16)),
            width: u32_at(24),
            height: u32_at(28),
            scale: f64::from_bits(u64_at(32)),
            dropped: u32_at(40),
            payload_len,
        })
    }

    fn into_message(self, body: &[u8]) -> Result<ServerMessage, ServiceError> {
        let payload = if self.kind.is_frame() {
            if self.width as usize * self.height as usize != body.len() {
                return Err(ServiceError::Protocol(format!(
                    "frame {}x{} does not match payload of {} bytes",
                    self.width,
                    self.height,
                    body.len()
                )));
            }
            Payload::Frame { width: self.width, height: self.height, scale_mm_per_px: self.scale, pixels: body.to_vec() }
        } else {
            Payload::Json(serde_json::from_slice(body).map_err(|e| ServiceError::Protocol(format!("bad json body: {e}")))?)
        };
        Ok(ServerMessage { kind: self.kind, seq: self.seq, t: self.t, dropped: self.dropped, payload })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyDirection {
    #[serde(rename = "+x")]
    PlusX,
    #[serde(rename = "-x")]
    MinusX,
    #[serde(rename = "+y")]
    PlusY,
    #[serde(rename = "-y")]
    MinusY,
    #[serde(rename = "+z")]
    PlusZ,
    #[serde(rename = "-z")]
    MinusZ,
    #[serde(rename = "+axial")]
    PlusAxial,
    #[serde(rename = "-axial")]
    MinusAxial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Auto,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientCommand {
    SetTarget { u: f64, v: f64 },
    SetMode { mode: ControlMode },
    Key { direction: KeyDirection },
    Start,
    Abort,
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientEnvelope {
    pub seq: u64,
    #[serde(flatten)]
    pub command: ClientCommand,
}

impl ClientEnvelope {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("command serializes");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self, ServiceError> {
        serde_json::from_str(line.trim()).map_err(|e| ServiceError::Protocol(format!("bad command: {e}")))
    }
}

/// First line a client sends. A known token resumes that session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "hello")]
pub struct Hello {
    #[serde(default)]
    pub token: Option<String>,
}

impl Hello {
    pub fn parse(line: &str) -> Result<Self, ServiceError> {
        serde_json::from_str(line.trim()).map_err(|e| ServiceError::Protocol(format!("bad hello: {e}")))
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("hello serializes");
        s.push('\n');
        s
    }
}
