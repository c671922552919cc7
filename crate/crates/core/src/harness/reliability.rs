use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::{bin_sums, Ci, Metric, MetricsRecord};
use super::ScenarioError;
use crate::link::{LinkProfile, Network, TxMode};
use crate::message::{frame_len, Message, NodeId, TopicMessage, TopicPayload, VideoFrame, DEFAULT_MTU};
use crate::time::{Nanos, SEC};

/// Raw 320x240 at 12 bits per pixel.
pub const DEFAULT_FRAME_BYTES: usize = 320 * 240 * 3 / 2;

#[derive(Clone, Debug)]
pub struct ReliabilityParams {
    pub fps: u32,
    pub profile: LinkProfile,
    /// Multiplies the raw frame size.
    pub scale: f64,
    pub mode: TxMode,
    pub distance_m: f64,
    pub duration: Nanos,
    pub seed: u64,
}

impl ReliabilityParams {
    pub fn new(fps: u32, profile: LinkProfile) -> Self {
        Self { fps, profile, scale: 1.0, mode: TxMode::Reliable, distance_m: 50.0, duration: 60 * SEC, seed: 1 }
    }

    pub fn frame_bytes(&self) -> usize {
        ((DEFAULT_FRAME_BYTES as f64) * self.scale).round().max(1.0) as usize
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReliabilityResult {
    pub profile: String,
    pub fps: u32,
    /// Per second, fraction of the frames sent in that second that were lost.
    pub frame_loss: Vec<f64>,
    /// Per second, wire bytes offered, Mbps.
    pub bw_util_mbps: Vec<f64>,
    /// Per second, wire bytes of the frames sent in that second that arrived complete, Mbps.
    pub throughput_mbps: Vec<f64>,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub frames_lost: u64,
    pub frames_in_flight: u64,
    pub fragments_per_frame: usize,
}

impl ReliabilityResult {
    pub fn loss(&self) -> Ci {
        Ci::of(&self.frame_loss)
    }

    pub fn metrics(&self) -> Vec<MetricsRecord> {
        let scenario = format!("{} fps", self.fps);
        let mut out = Vec::new();
        for i in 0..self.frame_loss.len() {
            let t = (i as f64 + 1.0) * 1000.0;
            for (m, v) in [
                (Metric::FrameLoss, self.frame_loss[i]),
                (Metric::BwUtil, self.bw_util_mbps[i]),
                (Metric::Throughput, self.throughput_mbps[i]),
            ] {
                out.push(MetricsRecord::new(t, m, v).labels("reliability", &self.profile, &scenario));
            }
        }
        out
    }
}

const UAV: NodeId = NodeId::uav(1);
const GW: NodeId = NodeId::gateway(1);

fn fragment(frame_no: u64, seq: u64, raw: usize) -> Message {
    Message::Topic(TopicMessage {
        topic_name: "video".into(),
        publisher: UAV,
        seq,
        payload: TopicPayload::Video(VideoFrame {
            frame_no,
            width: 320,
            height: 240,
            payload_len: raw as u32,
            payload: vec![0; raw],
        }),
        sent_at: u64::MAX,
    })
}

/// Wire sizes of the fragments carrying one frame of `bytes` raw bytes.
pub fn fragment_sizes(bytes: usize) -> Vec<usize> {
    let overhead = frame_len(&fragment(u64::MAX, u64::MAX, 0)).unwrap() + 8;
    // Hex encoding doubles the payload.
    let chunk = (DEFAULT_MTU - overhead) / 2;
    let mut out = Vec::new();
    let mut left = bytes;
    while left > 0 {
        let raw = left.min(chunk);
        out.push(overhead + 2 * raw);
        left -= raw;
    }
    out
}

/// One UAV streaming video frames to its gateway at a fixed rate.
pub fn run_reliability(p: &ReliabilityParams) -> Result<ReliabilityResult, ScenarioError> {
    p.profile.validate().map_err(ScenarioError::Invalid)?;
    if p.fps == 0 {
        return Err(ScenarioError::Invalid("fps must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut net = Network::new();
    net.set_position(GW, [0.0; 3]);
    net.set_position(UAV, [p.distance_m, 0.0, 0.0]);
    let link = net.attach_link(UAV, GW, p.profile.clone()).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let sizes = fragment_sizes(p.frame_bytes());
    let wire: usize = sizes.iter().sum();

    let mut sent = Vec::new();
    let mut received = Vec::new();
    let mut offered_bytes = Vec::new();
    let (mut lost, mut in_flight) = (0u64, 0u64);
    let mut k = 0u64;
    loop {
        let t = k * SEC / p.fps as u64;
        if t >= p.duration {
            break;
        }
        let mut complete = true;
        let mut last = t;
        for &b in &sizes {
            let out = net.transmit(link, UAV, b, t, p.mode, &mut rng).unwrap();
            offered_bytes.push((t, b as f64));
            match out.delivered_at() {
                Some(at) => last = last.max(at),
                None => complete = false,
            }
        }
        sent.push((t, 1.0));
        if !complete {
            lost += 1;
        } else if last >= p.duration {
            in_flight += 1;
        } else {
            received.push((t, 1.0));
        }
        k += 1;
    }
    let frames_sent = sent.len() as u64;
    let sent_bins = bin_sums(sent, SEC, p.duration);
    let recv_bins = bin_sums(received.iter().copied(), SEC, p.duration);
    let mbps = |bytes: f64| bytes * 8.0 / 1e6;
    let frame_loss = sent_bins.iter().zip(&recv_bins).map(|(s, r)| if *s == 0.0 { 0.0 } else { 1.0 - r / s }).collect();
    let bw_util_mbps = bin_sums(offered_bytes, SEC, p.duration).into_iter().map(mbps).collect();
    let throughput_mbps = recv_bins.iter().map(|r| mbps(r * wire as f64)).collect();
    Ok(ReliabilityResult {
        profile: p.profile.name.clone(),
        fps: p.fps,
        frame_loss,
        bw_util_mbps,
        throughput_mbps,
        frames_sent,
        frames_received: received.len() as u64,
        frames_lost: lost,
        frames_in_flight: in_flight,
        fragments_per_frame: sizes.len(),
    })
}
