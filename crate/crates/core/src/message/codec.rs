//! Frame layout: `len: u32 BE | tag: u8 | payload`, where `len` counts the tag
//! byte plus the payload. The payload is a JSON object with keys sorted at
//! every nesting level, so equal messages always produce equal bytes.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use super::Message;

pub const HEADER_LEN: usize = 4;

/// Default per-frame budget (whole frame, header included).
pub const DEFAULT_MTU: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("frame of {len} bytes exceeds MTU budget {mtu}")]
    Oversize { len: usize, mtu: usize },
    #[error("message violates its invariants: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("incomplete frame: need {needed} more bytes")]
    NeedMoreBytes { needed: usize },
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("decoded message violates its invariants: {0}")]
    InvalidMessage(String),
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
}

fn canonical(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, canonical(v));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        other => other,
    }
}

fn to_payload<T: Serialize>(inner: &T) -> Result<Vec<u8>, EncodeError> {
    let value = serde_json::to_value(inner).map_err(|e| EncodeError::Invalid(e.to_string()))?;
    serde_json::to_vec(&canonical(value)).map_err(|e| EncodeError::Invalid(e.to_string()))
}

fn from_payload<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, DecodeError> {
    serde_json::from_slice(bytes).map_err(|e| DecodeError::Malformed(e.to_string()))
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    encode_with_limit(msg, DEFAULT_MTU)
}

/// Encodes one frame, refusing frames larger than `mtu` bytes in total.
pub fn encode_with_limit(msg: &Message, mtu: usize) -> Result<Vec<u8>, EncodeError> {
    msg.validate().map_err(EncodeError::Invalid)?;
    let payload = match msg {
        Message::Topic(m) => to_payload(m)?,
        Message::Service(m) => to_payload(m)?,
        Message::Ack(m) => to_payload(m)?,
        Message::Identify(m) => to_payload(m)?,
        Message::IdentifyReply(m) => to_payload(m)?,
        Message::Hello(m) => to_payload(m)?,
        Message::Join(m) => to_payload(m)?,
        Message::Advertise(m) => to_payload(m)?,
    };
    let len = HEADER_LEN + 1 + payload.len();
    if len > mtu {
        return Err(EncodeError::Oversize { len, mtu });
    }
    let mut frame = Vec::with_capacity(len);
    frame.extend_from_slice(&((payload.len() + 1) as u32).to_be_bytes());
    frame.push(msg.tag());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Size in bytes of `msg` on the wire, ignoring the MTU budget.
pub fn frame_len(msg: &Message) -> Result<usize, EncodeError> {
    encode_with_limit(msg, usize::MAX).map(|f| f.len())
}

/// Splits the first complete frame off `buf`, returning it with the number
/// of bytes consumed.
fn split_frame(buf: &[u8]) -> Result<(Message, usize), DecodeError> {
    if buf.len() < HEADER_LEN {
        return Err(DecodeError::NeedMoreBytes { needed: HEADER_LEN - buf.len() });
    }
    let body_len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if body_len == 0 {
        return Err(DecodeError::Malformed("zero-length frame".into()));
    }
    let total = HEADER_LEN + body_len;
    if buf.len() < total {
        return Err(DecodeError::NeedMoreBytes { needed: total - buf.len() });
    }
    let tag = buf[HEADER_LEN];
    let payload = &buf[HEADER_LEN + 1..total];
    let msg = match tag {
        0x01 => Message::Topic(from_payload(payload)?),
        0x02 => Message::Service(from_payload(payload)?),
        0x03 => Message::Ack(from_payload(payload)?),
        0x04 => Message::Identify(from_payload(payload)?),
        0x05 => Message::IdentifyReply(from_payload(payload)?),
        0x06 => Message::Hello(from_payload(payload)?),
        0x07 => Message::Join(from_payload(payload)?),
        0x08 => Message::Advertise(from_payload(payload)?),
        other => return Err(DecodeError::UnknownTag(other)),
    };
    msg.validate().map_err(DecodeError::InvalidMessage)?;
    Ok((msg, total))
}

/// Decodes exactly one frame.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let (msg, used) = split_frame(bytes)?;
    if used != bytes.len() {
        return Err(DecodeError::TrailingBytes(bytes.len() - used));
    }
    Ok(msg)
}

/// Decodes a concatenation of frames, as stored in `.frames` capture files.
pub fn decode_stream(bytes: &[u8]) -> Result<Vec<Message>, DecodeError> {
    let mut out = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        let (msg, used) = split_frame(rest)?;
        out.push(msg);
        rest = &rest[used..];
    }
    Ok(out)
}

/// Incremental decoder for stream transports.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
}

impl FrameReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Returns the next complete frame, `Ok(None)` when more bytes are needed.
    /// A malformed frame is consumed and reported so the stream can continue.
    pub fn next_frame(&mut self) -> Result<Option<Message>, DecodeError> {
        match split_frame(&self.buf) {
            Ok((msg, used)) => {
                self.buf.drain(..used);
                Ok(Some(msg))
            }
            Err(DecodeError::NeedMoreBytes { .. }) => Ok(None),
            Err(e) => {
                if self.buf.len() >= HEADER_LEN {
                    let body = u32::from_be_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]]) as usize;
                    let skip = (HEADER_LEN + body).min(self.buf.len());
                    self.buf.drain(..skip);
                }
                Err(e)
            }
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}
