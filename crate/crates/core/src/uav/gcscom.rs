use std::collections::{BTreeMap, VecDeque};

use crate::message::{ChannelKind, Identify, IdentifyReply, Message, NodeId, TopicMessage};
use crate::time::{Nanos, MS, SEC};

pub const BACKOFF_BASE: Nanos = 200 * MS;
pub const BACKOFF_CAP: Nanos = 2 * SEC;
/// Topics kept while the topic channel is down; oldest are dropped first.
pub const DEFAULT_BUFFER: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub enum ChannelState {
    /// Never started.
    Disconnected,
    /// Waiting for the transport (`retry_at` set while backing off) or,
    /// with `identifying`, for the identify reply.
    Connecting {
        retry_at: Option<Nanos>,
        identifying: bool,
    },
    Connected,
    /// Identification was refused; no further reconnects.
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClientAction {
    /// Open the transport for this channel.
    Connect(ChannelKind),
    Send(ChannelKind, Message),
}

#[derive(Clone, Debug)]
struct Channel {
    state: ChannelState,
    failures: u32,
}

impl Channel {
    fn new() -> Self {
        Self { state: ChannelState::Disconnected, failures: 0 }
    }
}

/// Capped exponential backoff after `failures` consecutive failed attempts.
pub fn backoff(failures: u32) -> Nanos {
    BACKOFF_BASE.saturating_mul(1u64 << failures.min(16)).min(BACKOFF_CAP)
}

/// UAV side of the GCS communication module: one topic channel and one
/// service channel towards the DPSL, each identified on connect.
#[derive(Clone, Debug)]
pub struct GcsClient {
    pub node: NodeId,
    pub session: u64,
    topic: Channel,
    service: Channel,
    buffer: VecDeque<TopicMessage>,
    buffer_cap: usize,
    dropped: u64,
    resume: BTreeMap<String, u64>,
}

impl GcsClient {
    pub fn new(node: NodeId, session: u64) -> Self {
        Self::with_buffer(node, session, DEFAULT_BUFFER)
    }

    pub fn with_buffer(node: NodeId, session: u64, buffer_cap: usize) -> Self {
        Self {
            node,
            session,
            topic: Channel::new(),
            service: Channel::new(),
            buffer: VecDeque::new(),
            buffer_cap,
            dropped: 0,
            resume: BTreeMap::new(),
        }
    }

    fn chan(&mut self, kind: ChannelKind) -> &mut Channel {
        match kind {
            ChannelKind::Topic => &mut self.topic,
            ChannelKind::Service => &mut self.service,
        }
    }

    pub fn state(&self, kind: ChannelKind) -> &ChannelState {
        match kind {
            ChannelKind::Topic => &self.topic.state,
            ChannelKind::Service => &self.service.state,
        }
    }

    pub fn is_connected(&self, kind: ChannelKind) -> bool {
        *self.state(kind) == ChannelState::Connected
    }

    pub fn failed(&self) -> Option<&str> {
        [&self.topic.state, &self.service.state].into_iter().find_map(|s| match s {
            ChannelState::Failed(r) => Some(r.as_str()),
            _ => None,
        })
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Last sequence number per topic the DPSL reported holding.
    pub fn resume_seq(&self) -> &BTreeMap<String, u64> {
        &self.resume
    }

    /// Earliest pending reconnect time, if any channel is waiting.
    pub fn next_retry(&self) -> Option<Nanos> {
        [&self.topic.state, &self.service.state]
            .into_iter()
            .filter_map(|s| match s {
                ChannelState::Disconnected => Some(0),
                ChannelState::Connecting { retry_at, .. } => *retry_at,
                _ => None,
            })
            .min()
    }

    /// Returns connect requests for channels whose retry time has come.
    pub fn poll(&mut self, now: Nanos) -> Vec<ClientAction> {
        let mut out = Vec::new();
        for kind in [ChannelKind::Topic, ChannelKind::Service] {
            let due = match self.chan(kind).state {
                ChannelState::Disconnected => true,
                ChannelState::Connecting { retry_at: Some(t), .. } => t <= now,
                _ => false,
            };
            if due {
                self.chan(kind).state = ChannelState::Connecting { retry_at: None, identifying: false };
                out.push(ClientAction::Connect(kind));
            }
        }
        out
    }

    /// Transport for `kind` is up: send the identify request.
    pub fn on_transport_up(&mut self, kind: ChannelKind) -> Vec<ClientAction> {
        if matches!(self.chan(kind).state, ChannelState::Failed(_)) {
            return Vec::new();
        }
        self.chan(kind).state = ChannelState::Connecting { retry_at: None, identifying: true };
        let id = Identify { node: self.node, channel: kind, session: self.session };
        vec![ClientAction::Send(kind, Message::Identify(id))]
    }

    /// Transport for `kind` failed or closed.
    pub fn on_transport_down(&mut self, kind: ChannelKind, now: Nanos) {
        let ch = self.chan(kind);
        if matches!(ch.state, ChannelState::Failed(_)) {
            return;
        }
        let wait = backoff(ch.failures);
        ch.failures = ch.failures.saturating_add(1);
        ch.state = ChannelState::Connecting { retry_at: Some(now + wait), identifying: false };
    }

    pub fn on_identify_reply(&mut self, reply: &IdentifyReply) -> Vec<ClientAction> {
        let kind = reply.channel;
        if self.chan(kind).state != (ChannelState::Connecting { retry_at: None, identifying: true }) {
            return Vec::new();
        }
        if !reply.accepted {
            let reason = reply.reason.clone().unwrap_or_else(|| "identification rejected".into());
            self.chan(kind).state = ChannelState::Failed(reason);
            return Vec::new();
        }
        let ch = self.chan(kind);
        ch.state = ChannelState::Connected;
        ch.failures = 0;
        if kind != ChannelKind::Topic {
            return Vec::new();
        }
        for (topic, seq) in &reply.resume_seq {
            let e = self.resume.entry(topic.clone()).or_default();
            *e = (*e).max(*seq);
        }
        let resume = &self.resume;
        self.buffer
            .drain(..)
            .filter(|m| resume.get(&m.topic_name).is_none_or(|&s| m.seq > s))
            .map(|m| ClientAction::Send(ChannelKind::Topic, Message::Topic(m)))
            .collect()
    }

    /// Sends the topic now if connected, otherwise buffers it.
    pub fn publish(&mut self, msg: TopicMessage) -> Option<ClientAction> {
        if self.is_connected(ChannelKind::Topic) {
            return Some(ClientAction::Send(ChannelKind::Topic, Message::Topic(msg)));
        }
        if self.buffer_cap == 0 {
            self.dropped += 1;
            return None;
        }
        if self.buffer.len() == self.buffer_cap {
            self.buffer.pop_front();
            self.dropped += 1;
        }
        self.buffer.push_back(msg);
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{Telemetry, TopicPayload};

    fn topic(seq: u64) -> TopicMessage {
        TopicMessage {
            topic_name: "position".into(),
            publisher: NodeId::uav(1),
            seq,
            payload: TopicPayload::Telemetry(Telemetry {
                position: [0.0; 3],
                orientation: [1.0, 0.0, 0.0, 0.0],
                battery_voltage: 12.0,
                timestamp: seq,
            }),
            sent_at: seq,
        }
    }

    fn reply(kind: ChannelKind, accepted: bool, resume: &[(&str, u64)]) -> IdentifyReply {
        IdentifyReply {
            node: NodeId::uav(1),
            channel: kind,
            accepted,
            reason: (!accepted).then(|| "duplicate".into()),
            resume_seq: resume.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn backoff_is_capped() {
        assert_eq!(backoff(0), 200 * MS);
        assert_eq!(backoff(1), 400 * MS);
        assert_eq!(backoff(3), 1600 * MS);
        assert_eq!(backoff(4), 2 * SEC);
        assert_eq!(backoff(60), 2 * SEC);
    }

    #[test]
    fn connect_identify_and_flush() {
        let mut c = GcsClient::new(NodeId::uav(1), 7);
        for s in 1..=5 {
            assert!(c.publish(topic(s)).is_none());
        }
        let acts = c.poll(0);
        assert_eq!(acts.len(), 2);
        let acts = c.on_transport_up(ChannelKind::Topic);
        assert_eq!(
            acts,
            vec![ClientAction::Send(
                ChannelKind::Topic,
                Message::Identify(Identify { node: NodeId::uav(1), channel: ChannelKind::Topic, session: 7 })
            )]
        );
        let flushed = c.on_identify_reply(&reply(ChannelKind::Topic, true, &[("position", 3)]));
        let seqs: Vec<u64> = flushed
            .iter()
            .map(|a| match a {
                ClientAction::Send(_, Message::Topic(t)) => t.seq,
                _ => panic!(),
            })
            .collect();
        assert_eq!(seqs, vec![4, 5]);
        assert!(c.publish(topic(6)).is_some());
    }

    #[test]
    fn reconnect_backs_off() {
        let mut c = GcsClient::new(NodeId::uav(1), 1);
        c.poll(0);
        c.on_transport_down(ChannelKind::Topic, 0);
        assert!(matches!(c.state(ChannelKind::Topic), ChannelState::Connecting { .. }));
        assert_eq!(c.next_retry(), Some(200 * MS));
        assert!(c.poll(100 * MS).is_empty());
        assert_eq!(c.poll(200 * MS), vec![ClientAction::Connect(ChannelKind::Topic)]);
        c.on_transport_down(ChannelKind::Topic, 200 * MS);
        assert_eq!(c.next_retry(), Some(600 * MS));
    }

    #[test]
    fn rejection_is_terminal() {
        let mut c = GcsClient::new(NodeId::uav(1), 1);
        c.poll(0);
        c.on_transport_up(ChannelKind::Service);
        c.on_identify_reply(&reply(ChannelKind::Service, false, &[]));
        assert_eq!(c.failed(), Some("duplicate"));
        c.on_transport_down(ChannelKind::Service, 0);
        assert!(matches!(c.state(ChannelKind::Service), ChannelState::Failed(_)));
        assert!(c.on_transport_up(ChannelKind::Service).is_empty());
    }

    #[test]
    fn buffer_drops_oldest() {
        let mut c = GcsClient::with_buffer(NodeId::uav(1), 1, 2);
        for s in 1..=4 {
            c.publish(topic(s));
        }
        assert_eq!(c.buffered(), 2);
        assert_eq!(c.dropped(), 2);
    }
}
