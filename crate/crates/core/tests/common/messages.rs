use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use unet::message::*;

/// Seeded messages without proptest machinery, covering every variant.
pub fn seeded_message(rng: &mut ChaCha8Rng) -> Message {
    let t = rng.gen_range(0..10_000_000u64);
    match rng.gen_range(0..8) {
        0 => {
            let yaw: f64 = rng.gen_range(-3.1..3.1);
            Message::Topic(TopicMessage {
                topic_name: "position".into(),
                publisher: NodeId::uav(rng.gen_range(1..20)),
                seq: rng.gen(),
                payload: TopicPayload::Telemetry(Telemetry {
                    position: [rng.gen_range(-90.0..90.0), rng.gen_range(-180.0..180.0), rng.gen_range(0.0..120.0)],
                    orientation: [(yaw / 2.0).cos(), 0.0, 0.0, (yaw / 2.0).sin()],
                    battery_voltage: rng.gen_range(10.0..12.6),
                    timestamp: t,
                }),
                sent_at: t,
            })
        }
        1 => {
            let n = rng.gen_range(0..64usize);
            let payload: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
            Message::Topic(TopicMessage {
                topic_name: "video".into(),
                publisher: NodeId::uav(1),
                seq: rng.gen(),
                payload: TopicPayload::Video(VideoFrame {
                    frame_no: rng.gen(),
                    width: 320,
                    height: 240,
                    payload_len: n as u32,
                    payload,
                }),
                sent_at: t,
            })
        }
        2 => Message::Service(ServiceMessage {
            service: ServiceName::SetMode,
            target: NodeId::uav(rng.gen_range(1..20)),
            request_id: rng.gen(),
            args: Some("GUIDED".into()),
            issued_at: t,
        }),
        3 => Message::Ack(AckMessage {
            request_id: rng.gen(),
            status: AckStatus::Success,
            completed_at: t,
            reason: None,
        }),
        4 => Message::Identify(Identify {
            node: NodeId::uav(rng.gen_range(1..20)),
            channel: ChannelKind::Service,
            session: rng.gen(),
        }),
        5 => Message::IdentifyReply(IdentifyReply {
            node: NodeId::uav(2),
            channel: ChannelKind::Topic,
            accepted: true,
            reason: None,
            resume_seq: BTreeMap::from([("battery".to_string(), rng.gen::<u32>() as u64)]),
        }),
        6 => Message::Hello(HelloBeacon {
            sender: NodeId::gateway(1),
            neighbor_set: (1..rng.gen_range(1..6)).map(NodeId::uav).collect(),
            table_digest: (1..rng.gen_range(1..6))
                .map(|i| DigestEntry { destination: NodeId::uav(10 + i), metric: i, seq: rng.gen::<u32>() as u64 })
                .collect(),
            sent_at: t,
        }),
        _ => {
            Message::Join(JoinAnnouncement { node: NodeId::uav(rng.gen_range(1..20)), join_id: rng.gen(), sent_at: t })
        }
    }
}
