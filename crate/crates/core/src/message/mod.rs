//! Middleware message kinds exchanged between UAVs, gateways, the data
//! processing layer and UI clients, plus the framed wire encoding.

mod codec;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use codec::{
    decode, decode_stream, encode, encode_with_limit, frame_len, DecodeError, EncodeError, FrameReader, DEFAULT_MTU,
    HEADER_LEN,
};

/// Tolerance on the unit-norm quaternion invariant.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Uav,
    Gateway,
    Dpsl,
    UiClient,
}

impl NodeKind {
    fn prefix(self) -> &'static str {
        match self {
            NodeKind::Uav => "UAV",
            NodeKind::Gateway => "GW",
            NodeKind::Dpsl => "DPSL",
            NodeKind::UiClient => "UI",
        }
    }
}

/// Identity of a node within one scenario. Rendered as `UAV-3`, `GW-1`,
/// `DPSL-0` or `UI-2` on every textual surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: u32,
}

impl NodeId {
    pub const fn new(kind: NodeKind, index: u32) -> Self {
        Self { kind, index }
    }

    pub const fn uav(index: u32) -> Self {
        Self::new(NodeKind::Uav, index)
    }

    pub const fn gateway(index: u32) -> Self {
        Self::new(NodeKind::Gateway, index)
    }

    pub const fn dpsl(index: u32) -> Self {
        Self::new(NodeKind::Dpsl, index)
    }

    pub const fn ui(index: u32) -> Self {
        Self::new(NodeKind::UiClient, index)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.kind.prefix(), self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid node id {0:?}")]
pub struct ParseNodeIdError(pub String);

impl FromStr for NodeId {
    type Err = ParseNodeIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseNodeIdError(s.to_string());
        let (prefix, index) = s.rsplit_once('-').ok_or_else(err)?;
        let kind = match prefix {
            "UAV" => NodeKind::Uav,
            "GW" => NodeKind::Gateway,
            "DPSL" => NodeKind::Dpsl,
            "UI" => NodeKind::UiClient,
            _ => return Err(err()),
        };
        if index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let index = index.parse().map_err(|_| err())?;
        Ok(NodeId { kind, index })
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Autopilot sample: geodetic position, attitude quaternion `[w, x, y, z]`
/// and remaining battery voltage. `timestamp` is ms since scenario start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
    pub battery_voltage: f64,
    pub timestamp: u64,
}

impl Telemetry {
    pub fn latitude(&self) -> f64 {
        self.position[0]
    }

    pub fn longitude(&self) -> f64 {
        self.position[1]
    }

    pub fn altitude(&self) -> f64 {
        self.position[2]
    }

    fn validate(&self) -> Result<(), String> {
        if self.position.iter().chain(&self.orientation).any(|v| !v.is_finite()) {
            return Err("telemetry contains a non-finite value".into());
        }
        let norm = self.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
            return Err(format!("orientation quaternion norm {norm} is not 1"));
        }
        if self.altitude() < 0.0 {
            return Err(format!("negative altitude {}", self.altitude()));
        }
        if !self.battery_voltage.is_finite() || self.battery_voltage < 0.0 {
            return Err(format!("invalid battery voltage {}", self.battery_voltage));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoFrame {
    pub frame_no: u64,
    pub width: u32,
    pub height: u32,
    pub payload_len: u32,
    #[serde(with = "hex::serde")]
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopicPayload {
    Telemetry(Telemetry),
    Diagnostic { text: String },
    Video(VideoFrame),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicMessage {
    pub topic_name: String,
    pub publisher: NodeId,
    pub seq: u64,
    pub payload: TopicPayload,
    pub sent_at: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServiceName {
    ArmThrottle,
    SetMode,
    Takeoff,
    Land,
}

impl fmt::Display for ServiceName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ServiceName::ArmThrottle => "ARM_THROTTLE",
            ServiceName::SetMode => "SET_MODE",
            ServiceName::Takeoff => "TAKEOFF",
            ServiceName::Land => "LAND",
        })
    }
}

impl FromStr for ServiceName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ARM_THROTTLE" | "ARM" => Ok(ServiceName::ArmThrottle),
            "SET_MODE" | "MODE" => Ok(ServiceName::SetMode),
            "TAKEOFF" => Ok(ServiceName::Takeoff),
            "LAND" => Ok(ServiceName::Land),
            _ => Err(format!("unknown service {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceMessage {
    pub service: ServiceName,
    pub target: NodeId,
    pub request_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<String>,
    pub issued_at: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AckStatus {
    Success,
    Rejected,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AckMessage {
    pub request_id: u64,
    pub status: AckStatus,
    pub completed_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Topic,
    Service,
}

/// First frame on each GCS channel. `session` is chosen once per UAV run, so
/// a reconnect after handover presents the same value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identify {
    pub node: NodeId,
    pub channel: ChannelKind,
    pub session: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifyReply {
    pub node: NodeId,
    pub channel: ChannelKind,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Highest topic seq already stored by the service, per topic name.
    #[serde(default)]
    pub resume_seq: BTreeMap<String, u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestEntry {
    pub destination: NodeId,
    pub metric: u32,
    /// Send time (ms) of the destination's own beacon this route was learned
    /// from; larger is fresher.
    #[serde(default)]
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelloBeacon {
    pub sender: NodeId,
    pub neighbor_set: Vec<NodeId>,
    pub table_digest: Vec<DigestEntry>,
    pub sent_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinAnnouncement {
    pub node: NodeId,
    pub join_id: u64,
    pub sent_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicAdvertisement {
    pub origin: NodeId,
    pub topics: Vec<String>,
    pub sent_at: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Topic(TopicMessage),
    Service(ServiceMessage),
    Ack(AckMessage),
    Identify(Identify),
    IdentifyReply(IdentifyReply),
    Hello(HelloBeacon),
    Join(JoinAnnouncement),
    Advertise(TopicAdvertisement),
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Topic(_) => 0x01,
            Message::Service(_) => 0x02,
            Message::Ack(_) => 0x03,
            Message::Identify(_) => 0x04,
            Message::IdentifyReply(_) => 0x05,
            Message::Hello(_) => 0x06,
            Message::Join(_) => 0x07,
            Message::Advertise(_) => 0x08,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Message::Topic(_) => "topic",
            Message::Service(_) => "service",
            Message::Ack(_) => "ack",
            Message::Identify(_) => "identify",
            Message::IdentifyReply(_) => "identify_reply",
            Message::Hello(_) => "hello",
            Message::Join(_) => "join",
            Message::Advertise(_) => "advertise",
        }
    }

    /// True for mesh control-plane frames.
    pub fn is_control(&self) -> bool {
        matches!(self, Message::Hello(_) | Message::Join(_))
    }

    /// Checks the per-type invariants that must hold before a message is put
    /// on the wire and after one is taken off it.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Message::Topic(t) => {
                if t.topic_name.is_empty() {
                    return Err("empty topic name".into());
                }
                match &t.payload {
                    TopicPayload::Telemetry(tel) => tel.validate(),
                    TopicPayload::Video(v) if v.payload.len() != v.payload_len as usize => {
                        Err(format!("video payload_len {} != {}", v.payload_len, v.payload.len()))
                    }
                    _ => Ok(()),
                }
            }
            Message::Service(s) if s.target.kind != NodeKind::Uav => {
                Err(format!("service target {} is not a UAV", s.target))
            }
            Message::Hello(h) => {
                if h.neighbor_set.contains(&h.sender) {
                    return Err("beacon sender listed as its own neighbor".into());
                }
                if h.table_digest.iter().any(|e| e.metric == 0) {
                    return Err("beacon digest carries a zero metric".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}
