mod common;

use common::messages::seeded_message;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unet::message::*;

fn node() -> impl Strategy<Value = NodeId> {
    prop_oneof![
        (0u32..1000).prop_map(NodeId::uav),
        (0u32..1000).prop_map(NodeId::gateway),
        (0u32..10).prop_map(NodeId::dpsl),
        (0u32..10).prop_map(NodeId::ui),
    ]
}

fn uav() -> impl Strategy<Value = NodeId> {
    (0u32..1000).prop_map(NodeId::uav)
}

fn unit_quaternion() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("non-degenerate", |q| q.iter().map(|v| v * v).sum::<f64>() > 1e-3)
        .prop_map(|q| {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            q.map(|v| v / n)
        })
}

fn telemetry() -> impl Strategy<Value = Telemetry> {
    (-90.0f64..90.0, -180.0f64..180.0, 0.0f64..500.0, unit_quaternion(), 0.0f64..30.0, any::<u32>()).prop_map(
        |(lat, lon, alt, orientation, battery_voltage, t)| Telemetry {
            position: [lat, lon, alt],
            orientation,
            battery_voltage,
            timestamp: t as u64,
        },
    )
}

fn payload() -> impl Strategy<Value = TopicPayload> {
    prop_oneof![
        telemetry().prop_map(TopicPayload::Telemetry),
        "[ -~]{0,40}".prop_map(|text| TopicPayload::Diagnostic { text }),
        (any::<u64>(), prop::collection::vec(any::<u8>(), 0..200)).prop_map(|(frame_no, payload)| {
            TopicPayload::Video(VideoFrame {
                frame_no,
                width: 320,
                height: 240,
                payload_len: payload.len() as u32,
                payload,
            })
        }),
    ]
}

fn service() -> impl Strategy<Value = ServiceName> {
    prop_oneof![
        Just(ServiceName::ArmThrottle),
        Just(ServiceName::SetMode),
        Just(ServiceName::Takeoff),
        Just(ServiceName::Land)
    ]
}

fn status() -> impl Strategy<Value = AckStatus> {
    prop_oneof![Just(AckStatus::Success), Just(AckStatus::Rejected), Just(AckStatus::Timeout)]
}

fn channel() -> impl Strategy<Value = ChannelKind> {
    prop_oneof![Just(ChannelKind::Topic), Just(ChannelKind::Service)]
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        ("[a-z_/]{1,16}", node(), any::<u64>(), payload(), any::<u32>()).prop_map(
            |(topic_name, publisher, seq, payload, t)| Message::Topic(TopicMessage {
                topic_name,
                publisher,
                seq,
                payload,
                sent_at: t as u64
            })
        ),
        (service(), uav(), any::<u64>(), proptest::option::of("[A-Z0-9]{1,8}"), any::<u32>()).prop_map(
            |(service, target, request_id, args, t)| Message::Service(ServiceMessage {
                service,
                target,
                request_id,
                args,
                issued_at: t as u64
            })
        ),
        (any::<u64>(), status(), any::<u32>(), proptest::option::of("[ -~]{0,20}")).prop_map(
            |(request_id, status, t, reason)| Message::Ack(AckMessage {
                request_id,
                status,
                completed_at: t as u64,
                reason
            })
        ),
        (uav(), channel(), any::<u64>()).prop_map(|(node, channel, session)| Message::Identify(Identify {
            node,
            channel,
            session
        })),
        (uav(), channel(), any::<bool>(), prop::collection::btree_map("[a-z]{1,8}", any::<u64>(), 0..4)).prop_map(
            |(node, channel, accepted, resume_seq)| Message::IdentifyReply(IdentifyReply {
                node,
                channel,
                accepted,
                reason: (!accepted).then(|| "busy".to_string()),
                resume_seq,
            })
        ),
        (
            node(),
            prop::collection::vec(node(), 0..6),
            prop::collection::vec((node(), 1u32..16, any::<u32>()), 0..6),
            any::<u32>()
        )
            .prop_map(|(sender, nb, digest, t)| Message::Hello(HelloBeacon {
                sender,
                neighbor_set: nb.into_iter().filter(|n| *n != sender).collect(),
                table_digest: digest
                    .into_iter()
                    .map(|(destination, metric, seq)| DigestEntry { destination, metric, seq: seq as u64 })
                    .collect(),
                sent_at: t as u64,
            })),
        (node(), any::<u64>(), any::<u32>()).prop_map(|(node, join_id, t)| Message::Join(JoinAnnouncement {
            node,
            join_id,
            sent_at: t as u64
        })),
        (uav(), prop::collection::vec("[a-z]{1,10}", 0..5), any::<u32>()).prop_map(|(origin, topics, t)| {
            Message::Advertise(TopicAdvertisement { origin, topics, sent_at: t as u64 })
        }),
    ]
}

proptest! {
    #[test]
    fn decode_inverts_encode(m in message()) {
        let bytes = encode(&m).unwrap();
        prop_assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn encode_inverts_decode(m in message()) {
        let bytes = encode(&m).unwrap();
        let again = encode(&decode(&bytes).unwrap()).unwrap();
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn length_prefix_counts_the_rest_of_the_frame(m in message()) {
        let bytes = encode(&m).unwrap();
        let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        prop_assert_eq!(len, bytes.len() - HEADER_LEN);
        prop_assert_eq!(frame_len(&m).unwrap(), bytes.len());
    }

    #[test]
    fn stream_reader_handles_any_split(ms in prop::collection::vec(message(), 1..6), cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..5)) {
        let stream: Vec<u8> = ms.iter().flat_map(|m| encode(m).unwrap()).collect();
        let mut points: Vec<usize> = cuts.iter().map(|c| c.index(stream.len())).collect();
        points.push(stream.len());
        points.sort();
        let mut r = FrameReader::new();
        let mut got = Vec::new();
        let mut prev = 0;
        for p in points {
            r.push(&stream[prev..p]);
            prev = p;
            while let Some(m) = r.next_frame().unwrap() {
                got.push(m);
            }
        }
        prop_assert_eq!(r.buffered(), 0);
        prop_assert_eq!(&got, &ms);
        prop_assert_eq!(decode_stream(&stream).unwrap(), ms);
    }

    #[test]
    fn truncated_frames_ask_for_more(m in message(), cut in any::<prop::sample::Index>()) {
        let bytes = encode(&m).unwrap();
        let at = cut.index(bytes.len());
        let is_need_more = matches!(decode(&bytes[..at]), Err(DecodeError::NeedMoreBytes { .. }));
        prop_assert!(is_need_more);
    }
}

#[test]
fn thousand_seeded_messages_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let m = seeded_message(&mut rng);
        let bytes = encode(&m).unwrap();
        assert_eq!(decode(&bytes).unwrap(), m);
        assert_eq!(encode(&decode(&bytes).unwrap()).unwrap(), bytes);
    }
}

#[test]
fn golden_frames_are_stable() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/golden.frames");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let msgs: Vec<Message> = (0..16).map(|_| seeded_message(&mut rng)).collect();
    let bytes: Vec<u8> = msgs.iter().flat_map(|m| encode(m).unwrap()).collect();
    if std::env::var_os("UNET_BLESS").is_some() {
        std::fs::write(path, &bytes).unwrap();
    }
    let golden = std::fs::read(path).expect("fixture present; regenerate with UNET_BLESS=1");
    assert_eq!(decode_stream(&golden).unwrap(), msgs);
    assert_eq!(bytes, golden);
}

#[test]
fn payload_keys_are_sorted() {
    let m = Message::Ack(AckMessage {
        request_id: 9,
        status: AckStatus::Rejected,
        completed_at: 1,
        reason: Some("x".into()),
    });
    let bytes = encode(&m).unwrap();
    assert_eq!(bytes[4], 0x03);
    assert_eq!(
        std::str::from_utf8(&bytes[5..]).unwrap(),
        r#"{"completed_at":1,"reason":"x","request_id":9,"status":"REJECTED"}"#
    );
}

#[test]
fn invalid_messages_are_refused_both_ways() {
    let bad = Message::Topic(TopicMessage {
        topic_name: "position".into(),
        publisher: NodeId::uav(1),
        seq: 1,
        payload: TopicPayload::Telemetry(Telemetry {
            position: [0.0, 0.0, 1.0],
            orientation: [1.0, 0.1, 0.0, 0.0],
            battery_voltage: 12.0,
            timestamp: 0,
        }),
        sent_at: 0,
    });
    assert!(matches!(encode(&bad), Err(EncodeError::Invalid(_))));
    let mut raw = r#"{"node":"UAV-1","channel":"topic","session":1}"#.as_bytes().to_vec();
    let mut frame = ((raw.len() + 1) as u32).to_be_bytes().to_vec();
    frame.push(0x04);
    frame.append(&mut raw);
    assert!(decode(&frame).is_ok());
    frame[4] = 0x7f;
    assert_eq!(decode(&frame), Err(DecodeError::UnknownTag(0x7f)));
    let big = Message::Topic(TopicMessage {
        topic_name: "video".into(),
        publisher: NodeId::uav(1),
        seq: 1,
        payload: TopicPayload::Video(VideoFrame {
            frame_no: 0,
            width: 320,
            height: 240,
            payload_len: 40_000,
            payload: vec![0; 40_000],
        }),
        sent_at: 0,
    });
    assert!(matches!(encode(&big), Err(EncodeError::Oversize { .. })));
}
