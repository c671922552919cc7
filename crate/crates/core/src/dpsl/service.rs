use std::collections::{BTreeMap, BTreeSet};

use super::bridge::{ClientMsg, Pattern, RosterEntry, ServerMsg, Subscription, UavStatus};
use super::store::{Stored, TopicStore};
use crate::message::{
    AckMessage, AckStatus, ChannelKind, Identify, IdentifyReply, Message, NodeId, ServiceMessage, ServiceName,
    TopicMessage,
};
use crate::time::{to_ms, Nanos, SEC};

pub const SERVICE_DEADLINE: Nanos = 5 * SEC;
/// A UAV whose topic channel has been silent this long is OFFLINE.
pub const LIVENESS_WINDOW: Nanos = 3 * SEC;

pub type ClientId = u64;
/// Transport-level identity of one UAV channel connection.
pub type ConnId = u64;

#[derive(Clone, Debug, PartialEq)]
pub enum Effect {
    ToClient(ClientId, ServerMsg),
    /// Send on the UAV's service channel.
    ToUav {
        conn: ConnId,
        uav: NodeId,
        msg: Message,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DpslCounters {
    pub topics_stored: u64,
    pub unknown_publisher: u64,
    pub duplicate_topics: u64,
    pub fanout: u64,
    pub identify_rejected: u64,
    pub acks_relayed: u64,
    pub duplicate_acks: u64,
    pub timeouts: u64,
    pub bad_client_messages: u64,
}

#[derive(Clone, Debug)]
struct Registration {
    session: u64,
    topic_conn: Option<ConnId>,
    service_conn: Option<ConnId>,
    last_heard: Nanos,
    status: UavStatus,
    last_seen_ms: Option<u64>,
}

impl Registration {
    fn live(&self, now: Nanos) -> bool {
        self.topic_conn.is_some()
            && self.service_conn.is_some()
            && now.saturating_sub(self.last_heard) < LIVENESS_WINDOW
    }
}

#[derive(Clone, Debug)]
pub struct PendingCall {
    pub request_id: u64,
    pub origin: ClientId,
    pub client_ref: u64,
    pub target: NodeId,
    pub issued_at: Nanos,
    pub deadline: Nanos,
}

/// The data processing and service layer: fleet roster, topic store with
/// subscription fan-out, and service-call dispatch. Transport-free; callers
/// feed events in and carry out the returned effects.
#[derive(Clone, Debug, Default)]
pub struct DpslService {
    roster: BTreeMap<NodeId, Registration>,
    conns: BTreeMap<ConnId, (NodeId, ChannelKind)>,
    store: TopicStore,
    clients: BTreeMap<ClientId, BTreeSet<Subscription>>,
    next_client: ClientId,
    pending: BTreeMap<u64, PendingCall>,
    next_request: u64,
    counters: DpslCounters,
}

impl DpslService {
    pub fn new() -> Self {
        Self { next_request: 1, next_client: 1, ..Default::default() }
    }

    pub fn store(&self) -> &TopicStore {
        &self.store
    }

    pub fn counters(&self) -> DpslCounters {
        self.counters
    }

    pub fn pending(&self) -> impl Iterator<Item = &PendingCall> {
        self.pending.values()
    }

    pub fn status(&self, uav: NodeId) -> Option<UavStatus> {
        self.roster.get(&uav).map(|r| r.status)
    }

    pub fn roster(&self) -> Vec<RosterEntry> {
        self.roster.iter().map(|(n, r)| RosterEntry { uav: *n, status: r.status, last_seen: r.last_seen_ms }).collect()
    }

    pub fn online_count(&self) -> usize {
        self.roster.values().filter(|r| r.status == UavStatus::Online).count()
    }

    fn broadcast_roster(&self, out: &mut Vec<Effect>) {
        let roster = self.roster();
        for c in self.clients.keys() {
            out.push(Effect::ToClient(*c, ServerMsg::Roster { uavs: roster.clone() }));
        }
    }

    /// Recomputes ONLINE/OFFLINE and broadcasts the roster on any change.
    fn refresh(&mut self, now: Nanos, out: &mut Vec<Effect>) {
        let mut changed = false;
        for r in self.roster.values_mut() {
            let s = if r.live(now) { UavStatus::Online } else { UavStatus::Offline };
            if s != r.status {
                r.status = s;
                changed = true;
            }
        }
        if changed {
            self.broadcast_roster(out);
        }
    }

    /// Identify request arriving on connection `conn`.
    pub fn on_identify(&mut self, conn: ConnId, id: &Identify, now: Nanos) -> (IdentifyReply, Vec<Effect>) {
        let mut out = Vec::new();
        let reply = |accepted: bool, reason: Option<String>, resume_seq| IdentifyReply {
            node: id.node,
            channel: id.channel,
            accepted,
            reason,
            resume_seq,
        };
        if let Some(r) = self.roster.get(&id.node) {
            if r.session != id.session && r.live(now) {
                self.counters.identify_rejected += 1;
                return (reply(false, Some(format!("{} already registered", id.node)), BTreeMap::new()), out);
            }
        }
        let reg = self.roster.entry(id.node).or_insert(Registration {
            session: id.session,
            topic_conn: None,
            service_conn: None,
            last_heard: now,
            status: UavStatus::Offline,
            last_seen_ms: None,
        });
        if reg.session != id.session {
            // Previous pair is dead: forget it.
            for c in [reg.topic_conn.take(), reg.service_conn.take()].into_iter().flatten() {
                self.conns.remove(&c);
            }
            reg.session = id.session;
        }
        let slot = match id.channel {
            ChannelKind::Topic => &mut reg.topic_conn,
            ChannelKind::Service => &mut reg.service_conn,
        };
        if let Some(old) = slot.replace(conn) {
            self.conns.remove(&old);
        }
        reg.last_heard = now;
        self.conns.insert(conn, (id.node, id.channel));
        self.refresh(now, &mut out);
        let resume = if id.channel == ChannelKind::Topic { self.store.latest_seqs(id.node) } else { BTreeMap::new() };
        (reply(true, None, resume), out)
    }

    /// Transport for `conn` closed.
    pub fn on_disconnect(&mut self, conn: ConnId, now: Nanos) -> Vec<Effect> {
        let mut out = Vec::new();
        if let Some((node, kind)) = self.conns.remove(&conn) {
            if let Some(r) = self.roster.get_mut(&node) {
                let slot = match kind {
                    ChannelKind::Topic => &mut r.topic_conn,
                    ChannelKind::Service => &mut r.service_conn,
                };
                if *slot == Some(conn) {
                    *slot = None;
                }
            }
        }
        self.refresh(now, &mut out);
        out
    }

    pub fn on_topic(&mut self, conn: ConnId, msg: &TopicMessage, now: Nanos) -> Vec<Effect> {
        let mut out = Vec::new();
        match self.conns.get(&conn) {
            Some((node, ChannelKind::Topic)) if *node == msg.publisher => {}
            _ => {
                self.counters.unknown_publisher += 1;
                return out;
            }
        }
        if let Some(r) = self.roster.get_mut(&msg.publisher) {
            r.last_heard = now;
            r.last_seen_ms = Some(to_ms(now));
        }
        self.refresh(now, &mut out);
        if self.store.insert(msg) == Stored::Duplicate {
            self.counters.duplicate_topics += 1;
            return out;
        }
        self.counters.topics_stored += 1;
        for (c, subs) in &self.clients {
            if subs.iter().any(|s| s.matches(&msg.publisher, &msg.topic_name)) {
                self.counters.fanout += 1;
                out.push(Effect::ToClient(*c, topic_msg(msg)));
            }
        }
        out
    }

    pub fn on_ack(&mut self, conn: ConnId, ack: &AckMessage, now: Nanos) -> Vec<Effect> {
        let mut out = Vec::new();
        let from = self.conns.get(&conn).map(|(n, _)| *n);
        match self.pending.get(&ack.request_id) {
            Some(p) if Some(p.target) == from => {
                let p = self.pending.remove(&ack.request_id).unwrap();
                self.counters.acks_relayed += 1;
                out.push(Effect::ToClient(
                    p.origin,
                    ServerMsg::ServiceAck {
                        id: p.client_ref,
                        status: ack.status,
                        completed_at: ack.completed_at,
                        reason: ack.reason.clone(),
                    },
                ));
            }
            _ => self.counters.duplicate_acks += 1,
        }
        self.refresh(now, &mut out);
        out
    }

    pub fn connect_client(&mut self) -> (ClientId, Vec<Effect>) {
        let id = self.next_client;
        self.next_client += 1;
        self.clients.insert(id, BTreeSet::new());
        (id, vec![Effect::ToClient(id, ServerMsg::Roster { uavs: self.roster() })])
    }

    /// Drops the client's subscriptions; its pending calls still run to
    /// completion but their acks go nowhere.
    pub fn disconnect_client(&mut self, client: ClientId) {
        self.clients.remove(&client);
    }

    pub fn on_client_text(&mut self, client: ClientId, text: &str, now: Nanos) -> Vec<Effect> {
        match ClientMsg::parse(text) {
            Ok(m) => self.on_client(client, m, now),
            Err(_) => {
                self.counters.bad_client_messages += 1;
                Vec::new()
            }
        }
    }

    pub fn on_client(&mut self, client: ClientId, msg: ClientMsg, now: Nanos) -> Vec<Effect> {
        let mut out = Vec::new();
        if !self.clients.contains_key(&client) {
            return out;
        }
        match msg {
            ClientMsg::Subscribe(s) => {
                self.clients.get_mut(&client).unwrap().insert(s);
            }
            ClientMsg::Unsubscribe(s) => {
                self.clients.get_mut(&client).unwrap().remove(&s);
            }
            ClientMsg::PublishSnapshot { uav, topic } => {
                out.push(Effect::ToClient(client, ServerMsg::Roster { uavs: self.roster() }));
                let filter = Subscription { uav, topic };
                for ((n, t), e) in self.store.iter() {
                    if filter.matches(n, t) {
                        out.push(Effect::ToClient(client, topic_msg(&e.latest)));
                    }
                }
            }
            ClientMsg::CallService { id, service, target, args } => {
                let parsed = service
                    .parse::<ServiceName>()
                    .and_then(|s| target.parse::<NodeId>().map(|t| (s, t)).map_err(|e| e.to_string()));
                match parsed {
                    Ok((service, target)) => return self.call_service(client, id, service, target, args, now),
                    Err(reason) => out.push(rejected(client, id, now, reason)),
                }
            }
        }
        out
    }

    /// Dispatches a command to `target`; the ack (or a synthesized REJECTED /
    /// TIMEOUT) is delivered to `client` under `client_ref`.
    pub fn call_service(
        &mut self,
        client: ClientId,
        client_ref: u64,
        service: ServiceName,
        target: NodeId,
        args: Option<String>,
        now: Nanos,
    ) -> Vec<Effect> {
        let mut out = Vec::new();
        self.refresh(now, &mut out);
        let conn = match self.roster.get(&target) {
            Some(r) if r.status == UavStatus::Online => r.service_conn.unwrap(),
            _ => {
                out.push(rejected(client, client_ref, now, format!("{target} is offline")));
                return out;
            }
        };
        let request_id = self.next_request;
        self.next_request += 1;
        self.pending.insert(
            request_id,
            PendingCall {
                request_id,
                origin: client,
                client_ref,
                target,
                issued_at: now,
                deadline: now + SERVICE_DEADLINE,
            },
        );
        let msg = ServiceMessage { service, target, request_id, args, issued_at: to_ms(now) };
        out.push(Effect::ToUav { conn, uav: target, msg: Message::Service(msg) });
        out
    }

    /// Earliest time `tick` has work to do.
    pub fn next_deadline(&self) -> Option<Nanos> {
        let calls = self.pending.values().map(|p| p.deadline).min();
        let live = self
            .roster
            .values()
            .filter(|r| r.status == UavStatus::Online)
            .map(|r| r.last_heard + LIVENESS_WINDOW)
            .min();
        [calls, live].into_iter().flatten().min()
    }

    /// Expires overdue calls (TIMEOUT acks) and silent UAVs.
    pub fn tick(&mut self, now: Nanos) -> Vec<Effect> {
        let mut out = Vec::new();
        let overdue: Vec<u64> = self.pending.values().filter(|p| p.deadline <= now).map(|p| p.request_id).collect();
        for id in overdue {
            let p = self.pending.remove(&id).unwrap();
            self.counters.timeouts += 1;
            out.push(Effect::ToClient(
                p.origin,
                ServerMsg::ServiceAck {
                    id: p.client_ref,
                    status: AckStatus::Timeout,
                    completed_at: to_ms(now),
                    reason: Some("no acknowledgement before deadline".into()),
                },
            ));
        }
        self.refresh(now, &mut out);
        out
    }
}

fn topic_msg(m: &TopicMessage) -> ServerMsg {
    ServerMsg::Topic {
        uav: m.publisher,
        topic_name: m.topic_name.clone(),
        seq: m.seq,
        payload: m.payload.clone(),
        sent_at: m.sent_at,
    }
}

fn rejected(client: ClientId, id: u64, now: Nanos, reason: String) -> Effect {
    Effect::ToClient(
        client,
        ServerMsg::ServiceAck { id, status: AckStatus::Rejected, completed_at: to_ms(now), reason: Some(reason) },
    )
}

impl Subscription {
    pub fn all() -> Self {
        Subscription { uav: Pattern::Any, topic: Pattern::Any }
    }
}
