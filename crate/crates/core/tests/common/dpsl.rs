//! DPSL fixtures: registered UAVs and a lossy service path.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unet::dpsl::{ConnId, DpslService, Effect, ServerMsg};
use unet::message::{AckStatus, ChannelKind, Identify, Message, NodeId, ServiceName, TopicMessage, TopicPayload};
use unet::time::{Nanos, MS};
use unet::uav::{AutopilotConfig, FlightState, TopicSchedule, UavNode};

/// Topic and service connection ids of UAV `i`.
pub fn conns(i: u32) -> (ConnId, ConnId) {
    (2 * i as ConnId, 2 * i as ConnId + 1)
}

pub fn register(d: &mut DpslService, i: u32, now: Nanos) {
    let (t, s) = conns(i);
    for (conn, channel) in [(t, ChannelKind::Topic), (s, ChannelKind::Service)] {
        let (reply, _) = d.on_identify(conn, &Identify { node: NodeId::uav(i), channel, session: i as u64 }, now);
        assert!(reply.accepted);
    }
}

pub fn topic(uav: u32, name: &str, seq: u64) -> TopicMessage {
    TopicMessage {
        topic_name: name.into(),
        publisher: NodeId::uav(uav),
        seq,
        payload: TopicPayload::Diagnostic { text: format!("{seq}") },
        sent_at: seq,
    }
}

pub fn acks(effects: &[Effect]) -> Vec<(u64, u64, AckStatus)> {
    effects
        .iter()
        .filter_map(|e| match e {
            Effect::ToClient(c, ServerMsg::ServiceAck { id, status, .. }) => Some((*c, *id, *status)),
            _ => None,
        })
        .collect()
}

/// Stop-and-wait delivery over a channel that loses each transmission and
/// each link-level confirmation with probability `loss`. Returns how many
/// copies reach the far side: a lost confirmation makes the sender resend
/// a frame that already arrived.
pub fn lossy_copies(rng: &mut ChaCha8Rng, loss: f64) -> usize {
    let mut copies = 0;
    loop {
        if rng.gen_bool(loss) {
            continue;
        }
        copies += 1;
        if !rng.gen_bool(loss) {
            return copies;
        }
    }
}

/// Issues `calls` service calls to one UAV over channels that lose each
/// frame and each link-level confirmation with probability `loss`, then
/// counts the acks each call produced at the client. Also returns the
/// number of calls still pending.
pub fn acks_per_call(seed: u64, calls: usize, loss: f64) -> (BTreeMap<u64, usize>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = DpslService::new();
    register(&mut d, 1, 0);
    let mut uav = UavNode::new(
        NodeId::uav(1),
        FlightState::on_ground([0.0; 3], 12.6),
        TopicSchedule::standard(3.0),
        AutopilotConfig::default(),
        0,
    );
    let (client, _) = d.connect_client();
    let mut got = Vec::new();
    let mut now = 0;
    for k in 0..calls {
        now += 100 * MS;
        // Keep the UAV live.
        got.extend(d.on_topic(conns(1).0, &topic(1, "position", k as u64 + 1), now));
        let service = if rng.gen_bool(0.5) { ServiceName::ArmThrottle } else { ServiceName::SetMode };
        let out = d.call_service(client, k as u64, service, NodeId::uav(1), Some("GUIDED".into()), now);
        got.extend(out.iter().cloned());
        for e in out {
            let Effect::ToUav { msg: Message::Service(req), .. } = e else { continue };
            for _ in 0..lossy_copies(&mut rng, loss) {
                let ack = uav.handle_service(&req, now);
                for _ in 0..lossy_copies(&mut rng, loss) {
                    got.extend(d.on_ack(conns(1).1, &ack, now + MS));
                }
            }
        }
    }
    let mut per_call: BTreeMap<u64, usize> = BTreeMap::new();
    for (c, id, _) in acks(&got) {
        assert_eq!(c, client);
        *per_call.entry(id).or_default() += 1;
    }
    (per_call, d.pending().count())
}
