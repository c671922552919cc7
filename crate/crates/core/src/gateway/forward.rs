use std::collections::VecDeque;
use std::io::Write;
use std::net::SocketAddrV4;

use serde::Serialize;

use super::config::{GatewayConfig, GatewayError, InterfaceConfig, SystemOps, UplinkConfig};
use super::nat::{NatError, NatTable, DEFAULT_IDLE_TIMEOUT};
use crate::link::LinkProfile;
use crate::time::{Nanos, US};

pub const DEFAULT_FRAME_COST: Nanos = 50 * US;
pub const DEFAULT_POLL_COST: Nanos = 25 * US;
pub const DEFAULT_INGRESS_QUEUE: usize = 1 << 20;
pub const DEFAULT_NAT_CAPACITY: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct ForwarderParams {
    /// Fixed per-frame processing cost.
    pub frame_cost: Nanos,
    /// Extra per-frame cost for each configured ingress interface beyond the first.
    pub poll_cost: Nanos,
    pub uplink: LinkProfile,
    /// Drop-tail limit of each ingress queue.
    pub queue_cap_bytes: usize,
}

impl ForwarderParams {
    pub fn new(uplink: LinkProfile) -> Self {
        Self {
            frame_cost: DEFAULT_FRAME_COST,
            poll_cost: DEFAULT_POLL_COST,
            uplink,
            queue_cap_bytes: DEFAULT_INGRESS_QUEUE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ForwardRecord {
    pub ingress: usize,
    pub bytes: usize,
    pub arrived_at: Nanos,
    /// Frame leaves processing and starts on the uplink.
    pub dequeued_at: Nanos,
    /// Last bit is on the uplink.
    pub sent_at: Nanos,
}

impl ForwardRecord {
    pub fn processing_delay(&self) -> Nanos {
        self.dequeued_at - self.arrived_at
    }
}

#[derive(Clone, Debug)]
pub struct Egress<T> {
    pub record: ForwardRecord,
    pub item: T,
}

#[derive(Clone, Debug)]
struct Queued<T> {
    bytes: usize,
    arrived_at: Nanos,
    item: T,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ByteCounters {
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub bytes_dropped: u64,
    pub frames_dropped: u64,
}

/// Single-server forwarder with one drop-tail queue per ingress interface,
/// served round-robin. Service of a frame is the processing cost followed by
/// serialization onto the uplink.
#[derive(Clone, Debug)]
pub struct Forwarder<T> {
    params: ForwarderParams,
    queues: Vec<VecDeque<Queued<T>>>,
    queued_bytes: Vec<usize>,
    rr_next: usize,
    free_at: Nanos,
    counters: ByteCounters,
}

impl<T> Forwarder<T> {
    pub fn new(params: ForwarderParams, ingress_count: usize) -> Self {
        assert!(ingress_count > 0, "forwarder needs an ingress interface");
        Self {
            params,
            queues: (0..ingress_count).map(|_| VecDeque::new()).collect(),
            queued_bytes: vec![0; ingress_count],
            rr_next: 0,
            free_at: 0,
            counters: ByteCounters::default(),
        }
    }

    pub fn params(&self) -> &ForwarderParams {
        &self.params
    }

    pub fn ingress_count(&self) -> usize {
        self.queues.len()
    }

    /// Processing part of one frame's service.
    pub fn frame_cost(&self) -> Nanos {
        self.params.frame_cost + self.params.poll_cost * (self.queues.len() as u64 - 1)
    }

    pub fn service_time(&self, bytes: usize) -> Nanos {
        self.frame_cost() + self.params.uplink.serialization_ns(bytes)
    }

    pub fn counters(&self) -> ByteCounters {
        self.counters
    }

    pub fn bytes_queued(&self) -> u64 {
        self.queued_bytes.iter().sum::<usize>() as u64
    }

    pub fn conservation_holds(&self) -> bool {
        let c = self.counters;
        c.bytes_in == c.bytes_out + c.bytes_dropped + self.bytes_queued()
    }

    /// Serves every frame whose service starts strictly before `t`.
    fn serve_before(&mut self, t: Nanos, out: &mut Vec<Egress<T>>) {
        let n = self.queues.len();
        loop {
            let Some(q) = (0..n).map(|k| (self.rr_next + k) % n).find(|&q| !self.queues[q].is_empty()) else {
                return;
            };
            let head_arrival = self.queues[q].front().unwrap().arrived_at;
            let start = self.free_at.max(head_arrival);
            if start >= t {
                return;
            }
            let f = self.queues[q].pop_front().unwrap();
            self.queued_bytes[q] -= f.bytes;
            self.rr_next = (q + 1) % n;
            let dequeued_at = start + self.frame_cost();
            let sent_at = start + self.service_time(f.bytes);
            self.free_at = sent_at;
            self.counters.bytes_out += f.bytes as u64;
            out.push(Egress {
                record: ForwardRecord { ingress: q, bytes: f.bytes, arrived_at: f.arrived_at, dequeued_at, sent_at },
                item: f.item,
            });
        }
    }

    /// Offers a frame at `now`; returns the frames that went out since the
    /// previous call. Calls must be in non-decreasing time.
    pub fn ingress(&mut self, iface: usize, bytes: usize, item: T, now: Nanos) -> (bool, Vec<Egress<T>>) {
        let mut out = Vec::new();
        self.serve_before(now, &mut out);
        self.counters.bytes_in += bytes as u64;
        if self.queued_bytes[iface] + bytes > self.params.queue_cap_bytes {
            self.counters.bytes_dropped += bytes as u64;
            self.counters.frames_dropped += 1;
            return (false, out);
        }
        self.queued_bytes[iface] += bytes;
        self.queues[iface].push_back(Queued { bytes, arrived_at: now, item });
        (true, out)
    }

    /// Serves everything that starts at or before `now`.
    pub fn advance(&mut self, now: Nanos) -> Vec<Egress<T>> {
        let mut out = Vec::new();
        self.serve_before(now.saturating_add(1), &mut out);
        out
    }

    /// Counts a frame refused before queueing (e.g. by address translation).
    pub fn count_refused(&mut self, bytes: usize) {
        self.counters.bytes_in += bytes as u64;
        self.counters.bytes_dropped += bytes as u64;
        self.counters.frames_dropped += 1;
    }

    /// Discards everything waiting, as an interface restart does.
    pub fn flush(&mut self) {
        for (q, b) in self.queues.iter_mut().zip(self.queued_bytes.iter_mut()) {
            self.counters.frames_dropped += q.len() as u64;
            self.counters.bytes_dropped += *b as u64;
            q.clear();
            *b = 0;
        }
    }
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    time_ms: String,
    ingress_if: &'a str,
    bytes: usize,
    processing_delay_us: String,
}

/// Writes `time_ms,ingress_if,bytes,processing_delay_us`, one row per forwarded frame.
pub fn write_metrics_csv<W: Write>(records: &[ForwardRecord], iface_names: &[String], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(MetricsRow {
            time_ms: format!("{:.3}", r.dequeued_at as f64 / 1e6),
            ingress_if: &iface_names[r.ingress],
            bytes: r.bytes,
            processing_delay_us: format!("{:.3}", r.processing_delay() as f64 / 1e3),
        })?;
    }
    w.flush()?;
    Ok(())
}

struct Host<'a, T> {
    fwd: &'a mut Forwarder<T>,
}

impl<T> SystemOps for Host<'_, T> {
    fn assign_address(&mut self, _: &InterfaceConfig) -> Result<(), String> {
        Ok(())
    }
    fn enable_forwarding(&mut self) -> Result<(), String> {
        Ok(())
    }
    fn restart_interfaces(&mut self) -> Result<(), String> {
        self.fwd.flush();
        Ok(())
    }
    fn enable_masquerade(&mut self, _: &UplinkConfig) -> Result<(), String> {
        Ok(())
    }
    fn persist_rules(&mut self) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DropCounters {
    pub nat_full: u64,
    pub unknown_reverse: u64,
    pub not_running: u64,
}

/// Outbound frame after translation.
#[derive(Clone, Debug, PartialEq)]
pub struct Translated<T> {
    pub inner: SocketAddrV4,
    pub uplink_port: u16,
    pub item: T,
}

/// A gateway node: configuration state, address translation and forwarder.
#[derive(Clone, Debug)]
pub struct Gateway<T> {
    pub config: GatewayConfig,
    pub nat: NatTable,
    fwd: Forwarder<Translated<T>>,
    drops: DropCounters,
    records: Vec<ForwardRecord>,
    keep_records: bool,
}

impl<T> Gateway<T> {
    pub fn new(config: GatewayConfig, params: ForwarderParams) -> Self {
        let n = config.interfaces.len().max(1);
        Self {
            config,
            nat: NatTable::new(DEFAULT_NAT_CAPACITY, DEFAULT_IDLE_TIMEOUT),
            fwd: Forwarder::new(params, n),
            drops: DropCounters::default(),
            records: Vec::new(),
            keep_records: true,
        }
    }

    pub fn with_nat(mut self, nat: NatTable) -> Self {
        self.nat = nat;
        self
    }

    pub fn keep_records(&mut self, keep: bool) {
        self.keep_records = keep;
    }

    pub fn configure(&mut self) -> Result<(), GatewayError> {
        self.config.configure(&mut Host { fwd: &mut self.fwd })
    }

    pub fn forwarder(&self) -> &Forwarder<Translated<T>> {
        &self.fwd
    }

    pub fn drops(&self) -> DropCounters {
        self.drops
    }

    pub fn records(&self) -> &[ForwardRecord] {
        &self.records
    }

    pub fn iface_names(&self) -> Vec<String> {
        self.config.interfaces.iter().map(|i| i.name.clone()).collect()
    }

    pub fn iface_index(&self, name: &str) -> Option<usize> {
        self.config.interfaces.iter().position(|i| i.name == name)
    }

    fn collect(&mut self, out: Vec<Egress<Translated<T>>>) -> Vec<Egress<Translated<T>>> {
        if self.keep_records {
            self.records.extend(out.iter().map(|e| e.record));
        }
        out
    }

    /// Inner-to-uplink direction: translate the source, then queue.
    pub fn forward(
        &mut self,
        iface: usize,
        src: SocketAddrV4,
        bytes: usize,
        item: T,
        now: Nanos,
    ) -> Vec<Egress<Translated<T>>> {
        if !self.config.is_running() {
            self.drops.not_running += 1;
            self.fwd.count_refused(bytes);
            return self.advance(now);
        }
        let port = match self.nat.outbound(src, now) {
            Ok(p) => p,
            Err(_) => {
                self.drops.nat_full += 1;
                self.fwd.count_refused(bytes);
                return self.advance(now);
            }
        };
        let (_, out) = self.fwd.ingress(iface, bytes, Translated { inner: src, uplink_port: port, item }, now);
        self.collect(out)
    }

    pub fn advance(&mut self, now: Nanos) -> Vec<Egress<Translated<T>>> {
        let out = self.fwd.advance(now);
        self.collect(out)
    }

    /// Uplink-to-inner direction.
    pub fn reverse(&mut self, uplink_port: u16, now: Nanos) -> Result<SocketAddrV4, NatError> {
        self.nat.inbound(uplink_port, now).inspect_err(|_| self.drops.unknown_reverse += 1)
    }
}
