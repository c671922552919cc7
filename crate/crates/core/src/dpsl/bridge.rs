//! Bridge wire protocol between the DPSL and UI clients: one JSON object per
//! message, discriminated by `op`. See `docs/bridge-protocol.md`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::message::{AckStatus, NodeId, TopicPayload};

/// Exact value or `*`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pattern<T> {
    Any,
    Exact(T),
}

impl<T: PartialEq> Pattern<T> {
    pub fn matches(&self, v: &T) -> bool {
        match self {
            Pattern::Any => true,
            Pattern::Exact(x) => x == v,
        }
    }
}

impl<T: fmt::Display> Serialize for Pattern<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Pattern::Any => s.serialize_str("*"),
            Pattern::Exact(v) => s.collect_str(v),
        }
    }
}

impl<'de, T> Deserialize<'de> for Pattern<T>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "*" {
            return Ok(Pattern::Any);
        }
        s.parse().map(Pattern::Exact).map_err(serde::de::Error::custom)
    }
}

fn any<T>() -> Pattern<T> {
    Pattern::Any
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Subscription {
    #[serde(default = "any")]
    pub uav: Pattern<NodeId>,
    #[serde(default = "any")]
    pub topic: Pattern<String>,
}

impl Subscription {
    pub fn matches(&self, uav: &NodeId, topic: &str) -> bool {
        self.uav.matches(uav) && self.topic.matches(&topic.to_string())
    }
}

/// Messages a UI client sends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ClientMsg {
    Subscribe(Subscription),
    Unsubscribe(Subscription),
    /// Ask for the roster and the latest stored message of every topic
    /// matching the filter.
    PublishSnapshot {
        #[serde(default = "any")]
        uav: Pattern<NodeId>,
        #[serde(default = "any")]
        topic: Pattern<String>,
    },
    CallService {
        /// Client-chosen id echoed in the matching `service_ack`.
        id: u64,
        service: String,
        target: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        args: Option<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UavStatus {
    Online,
    Offline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub uav: NodeId,
    pub status: UavStatus,
    /// Time of the last topic frame, ms since start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_seen: Option<u64>,
}

/// Messages the DPSL sends to a UI client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ServerMsg {
    Topic {
        uav: NodeId,
        topic_name: String,
        seq: u64,
        payload: TopicPayload,
        sent_at: u64,
    },
    ServiceAck {
        id: u64,
        status: AckStatus,
        completed_at: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    Roster {
        uavs: Vec<RosterEntry>,
    },
}

impl ClientMsg {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bridge messages serialize")
    }
}

impl ServerMsg {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bridge messages serialize")
    }
}
