use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message as Ws;
use unet::dpsl::{ServerMsg, UavStatus};
use unet::harness::Scenario;
use unet::message::{
    encode, AckMessage, AckStatus, ChannelKind, FrameReader, Identify, Message, NodeId, TopicMessage, TopicPayload,
};
use unet_cli::live::{self, LiveConfig, DEFAULT_BRIDGE_PORT};

type WsStream = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<TcpStream>>;

fn local() -> LiveConfig {
    LiveConfig {
        listen_uav: SocketAddr::from(([127, 0, 0, 1], 0)),
        listen_bridge: SocketAddr::from(([127, 0, 0, 1], 0)),
        scenario: None,
    }
}

async fn ws(addr: SocketAddr) -> WsStream {
    tokio_tungstenite::connect_async(format!("ws://{addr}")).await.unwrap().0
}

async fn next_msg(w: &mut WsStream) -> ServerMsg {
    loop {
        let f = timeout(Duration::from_secs(5), w.next()).await.expect("bridge message").unwrap().unwrap();
        if let Ws::Text(t) = f {
            return ServerMsg::parse(&t).unwrap();
        }
    }
}

/// Skips roster updates until some other message arrives.
async fn next_non_roster(w: &mut WsStream) -> ServerMsg {
    loop {
        match next_msg(w).await {
            ServerMsg::Roster { .. } => continue,
            m => return m,
        }
    }
}

struct Channel {
    s: TcpStream,
    frames: FrameReader,
}

impl Channel {
    async fn open(addr: SocketAddr, node: NodeId, kind: ChannelKind) -> Channel {
        let mut c = Channel { s: TcpStream::connect(addr).await.unwrap(), frames: FrameReader::new() };
        c.send(&Message::Identify(Identify { node, channel: kind, session: 7 })).await;
        match c.recv().await {
            Message::IdentifyReply(r) => assert!(r.accepted, "{r:?}"),
            m => panic!("unexpected {m:?}"),
        }
        c
    }

    async fn send(&mut self, m: &Message) {
        self.s.write_all(&encode(m).unwrap()).await.unwrap();
    }

    async fn recv(&mut self) -> Message {
        let mut buf = [0u8; 4096];
        loop {
            if let Some(m) = self.frames.next_frame().unwrap() {
                return m;
            }
            let n = timeout(Duration::from_secs(5), self.s.read(&mut buf)).await.expect("frame").unwrap();
            assert!(n > 0, "channel closed");
            self.frames.push(&buf[..n]);
        }
    }
}

fn battery(seq: u64) -> Message {
    Message::Topic(TopicMessage {
        publisher: NodeId::uav(1),
        topic_name: "battery".into(),
        seq,
        payload: TopicPayload::Diagnostic { text: "12.4 V".into() },
        sent_at: seq * 100,
    })
}

#[test]
fn bridge_defaults_to_port_9090() {
    assert_eq!(DEFAULT_BRIDGE_PORT, 9090);
    assert_eq!(LiveConfig::default().listen_bridge.port(), 9090);
}

#[tokio::test]
async fn topics_reach_subscribers_and_commands_round_trip() {
    let server = live::start(local()).await.unwrap();
    let mut ui = ws(server.bridge_addr).await;
    assert!(matches!(next_msg(&mut ui).await, ServerMsg::Roster { uavs } if uavs.is_empty()));
    ui.send(Ws::Text(r#"{"op":"subscribe","uav":"UAV-1","topic":"battery"}"#.into())).await.unwrap();

    let uav = NodeId::uav(1);
    let mut topics = Channel::open(server.uav_addr, uav, ChannelKind::Topic).await;
    let mut service = Channel::open(server.uav_addr, uav, ChannelKind::Service).await;
    for seq in 1..=3 {
        topics.send(&battery(seq)).await;
    }
    for want in 1..=3 {
        match next_non_roster(&mut ui).await {
            ServerMsg::Topic { uav: u, topic_name, seq, .. } => {
                assert_eq!((u, topic_name.as_str(), seq), (uav, "battery", want));
            }
            m => panic!("unexpected {m:?}"),
        }
    }
    let roster = server.roster().await.unwrap();
    assert_eq!(roster.len(), 1);
    assert_eq!(roster[0].status, UavStatus::Online);

    ui.send(Ws::Text(r#"{"op":"call_service","id":42,"service":"SET_MODE","target":"UAV-1","args":"GUIDED"}"#.into()))
        .await
        .unwrap();
    let req = match service.recv().await {
        Message::Service(s) => s,
        m => panic!("unexpected {m:?}"),
    };
    assert_eq!(req.args.as_deref(), Some("GUIDED"));
    let ack = AckMessage { request_id: req.request_id, status: AckStatus::Success, completed_at: 30, reason: None };
    service.send(&Message::Ack(ack.clone())).await;
    // A retransmitted ack must not reach the client twice.
    service.send(&Message::Ack(ack)).await;
    match next_non_roster(&mut ui).await {
        ServerMsg::ServiceAck { id, status, .. } => assert_eq!((id, status), (42, AckStatus::Success)),
        m => panic!("unexpected {m:?}"),
    }
    // The two channels are separate connections, so wait for the duplicate
    // to be counted before checking that nothing else reached the client.
    timeout(Duration::from_secs(5), async {
        while server.counters().await.unwrap().duplicate_acks == 0 {
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    })
    .await
    .expect("duplicate ack counted");
    topics.send(&battery(4)).await;
    assert!(matches!(next_non_roster(&mut ui).await, ServerMsg::Topic { seq: 4, .. }));
    assert_eq!(server.counters().await.unwrap().acks_relayed, 1);
}

#[tokio::test]
async fn offline_target_is_rejected_and_bad_messages_are_survived() {
    let server = live::start(local()).await.unwrap();
    let mut ui = ws(server.bridge_addr).await;
    next_msg(&mut ui).await;
    ui.send(Ws::Text("{not json".into())).await.unwrap();
    ui.send(Ws::Text(r#"{"op":"call_service","id":1,"service":"LAND","target":"UAV-9"}"#.into())).await.unwrap();
    match next_non_roster(&mut ui).await {
        ServerMsg::ServiceAck { id, status, reason, .. } => {
            assert_eq!((id, status), (1, AckStatus::Rejected));
            assert!(reason.is_some());
        }
        m => panic!("unexpected {m:?}"),
    }
}

#[tokio::test]
async fn closing_a_channel_marks_the_uav_offline() {
    let server = live::start(local()).await.unwrap();
    let mut ui = ws(server.bridge_addr).await;
    next_msg(&mut ui).await;
    let uav = NodeId::uav(3);
    let topics = Channel::open(server.uav_addr, uav, ChannelKind::Topic).await;
    let _service = Channel::open(server.uav_addr, uav, ChannelKind::Service).await;
    loop {
        if let ServerMsg::Roster { uavs } = next_msg(&mut ui).await {
            if uavs.iter().any(|e| e.uav == uav && e.status == UavStatus::Online) {
                break;
            }
        }
    }
    drop(topics);
    loop {
        if let ServerMsg::Roster { uavs } = next_msg(&mut ui).await {
            if uavs.iter().any(|e| e.uav == uav && e.status == UavStatus::Offline) {
                break;
            }
        }
    }
}

#[tokio::test]
async fn simulated_fleet_publishes_through_the_bridge() {
    let scenario = Scenario::parse(
        r#"
name = "live"
duration_s = 30.0
topic_hz = 10.0
[[gateway]]
id = "GW-1"
position = [0.0, 0.0, 2.0]
[[uav]]
id = "UAV-1"
position = [50.0, 0.0, 20.0]
[[uav]]
id = "UAV-2"
position = [0.0, 50.0, 0.0]
"#,
    )
    .unwrap();
    let server = live::start(LiveConfig { scenario: Some(scenario), ..local() }).await.unwrap();
    let mut ui = ws(server.bridge_addr).await;
    ui.send(Ws::Text(r#"{"op":"subscribe","topic":"position"}"#.into())).await.unwrap();
    let mut seen = std::collections::BTreeMap::new();
    while seen.len() < 2 || seen.values().any(|&s| s < 3) {
        if let ServerMsg::Topic { uav, topic_name, seq, .. } = next_non_roster(&mut ui).await {
            assert_eq!(topic_name, "position");
            let prev = seen.insert(uav, seq);
            assert!(prev.is_none_or(|p| seq > p));
        }
    }
    // UAV-2 is on the ground: arming in GUIDED then taking off must succeed.
    for (id, service, args) in [(1, "SET_MODE", Some("GUIDED")), (2, "ARM_THROTTLE", None), (3, "TAKEOFF", Some("10"))]
    {
        let mut req = serde_json::json!({"op": "call_service", "id": id, "service": service, "target": "UAV-2"});
        if let Some(a) = args {
            req["args"] = a.into();
        }
        ui.send(Ws::Text(req.to_string())).await.unwrap();
        loop {
            if let ServerMsg::ServiceAck { id: got, status, reason, .. } = next_non_roster(&mut ui).await {
                assert_eq!(got, id);
                assert_eq!(status, AckStatus::Success, "{service}: {reason:?}");
                break;
            }
        }
    }
}
