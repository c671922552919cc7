use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::flight::{AutopilotConfig, FlightMode, FlightState};
use crate::message::{AckMessage, AckStatus, NodeId, ServiceMessage, ServiceName, TopicMessage, TopicPayload};
use crate::time::{to_ms, Nanos, MS, SEC};

/// Interval between motion updates when no topic is due sooner.
pub const MOTION_STEP: Nanos = 100 * MS;
/// Number of recent acks kept for answering retransmitted requests.
const ACK_CACHE: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub name: String,
    pub frequency_hz: f64,
}

/// Per-topic publish rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicSchedule {
    pub topics: Vec<TopicSpec>,
}

impl TopicSchedule {
    /// Position/orientation and battery voltage, both at `frequency_hz`.
    pub fn standard(frequency_hz: f64) -> Self {
        Self {
            topics: vec![
                TopicSpec { name: "position".into(), frequency_hz },
                TopicSpec { name: "battery".into(), frequency_hz },
            ],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for t in &self.topics {
            if !(t.frequency_hz > 0.0) || !t.frequency_hz.is_finite() {
                return Err(format!("topic {:?} has non-positive frequency", t.name));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct TopicClock {
    spec: TopicSpec,
    emitted: u64,
    next_seq: u64,
}

impl TopicClock {
    fn due(&self, start: Nanos) -> Nanos {
        start + (self.emitted as f64 * SEC as f64 / self.spec.frequency_hz).round() as Nanos
    }
}

/// Autopilot plus data bridge of one UAV: advances the flight state and turns
/// it into topic messages on schedule; applies service commands.
#[derive(Clone, Debug)]
pub struct UavNode {
    pub id: NodeId,
    pub state: FlightState,
    pub config: AutopilotConfig,
    clocks: Vec<TopicClock>,
    started_at: Nanos,
    last_step: Nanos,
    acks: BTreeMap<u64, AckMessage>,
    ack_order: VecDeque<u64>,
}

impl UavNode {
    pub fn new(id: NodeId, state: FlightState, schedule: TopicSchedule, config: AutopilotConfig, now: Nanos) -> Self {
        schedule.validate().expect("valid topic schedule");
        Self {
            id,
            state,
            config,
            clocks: schedule.topics.into_iter().map(|spec| TopicClock { spec, emitted: 0, next_seq: 1 }).collect(),
            started_at: now,
            last_step: now,
            acks: BTreeMap::new(),
            ack_order: VecDeque::new(),
        }
    }

    pub fn topic_names(&self) -> Vec<String> {
        self.clocks.iter().map(|c| c.spec.name.clone()).collect()
    }

    /// Next instant at which the node has something to do.
    pub fn next_due(&self) -> Nanos {
        let topic = self.clocks.iter().map(|c| c.due(self.started_at)).min();
        let motion = self.last_step + MOTION_STEP;
        topic.map_or(motion, |t| t.min(motion))
    }

    /// Continues topic numbering after `seq` (used on reconnect).
    pub fn resume_after(&mut self, topic: &str, seq: u64) {
        if let Some(c) = self.clocks.iter_mut().find(|c| c.spec.name == topic) {
            c.next_seq = c.next_seq.max(seq + 1);
        }
    }

    /// Advances the autopilot to `now` and returns the topic messages due in
    /// `(last step, now]` (the first call also covers `now` itself).
    pub fn autopilot_step(&mut self, now: Nanos) -> Vec<TopicMessage> {
        let mut out = Vec::new();
        loop {
            let next = self
                .clocks
                .iter()
                .enumerate()
                .map(|(i, c)| (c.due(self.started_at), i))
                .filter(|&(t, _)| t <= now)
                .min();
            let Some((t, i)) = next else { break };
            self.advance_state(t);
            let telemetry = self.state.telemetry(to_ms(t), &self.config);
            let clock = &mut self.clocks[i];
            out.push(TopicMessage {
                topic_name: clock.spec.name.clone(),
                publisher: self.id,
                seq: clock.next_seq,
                payload: TopicPayload::Telemetry(telemetry),
                sent_at: to_ms(t),
            });
            clock.next_seq += 1;
            clock.emitted += 1;
        }
        self.advance_state(now);
        out
    }

    fn advance_state(&mut self, to: Nanos) {
        if to > self.last_step {
            self.state.step((to - self.last_step) as f64 / SEC as f64, &self.config);
            self.last_step = to;
        }
    }

    /// Applies a command and returns its acknowledgement. A repeated
    /// `request_id` is answered from cache without re-executing.
    pub fn handle_service(&mut self, req: &ServiceMessage, now: Nanos) -> AckMessage {
        if let Some(ack) = self.acks.get(&req.request_id) {
            return ack.clone();
        }
        self.advance_state(now);
        let completed_at = to_ms(now) + self.config.state_change_ms;
        let result = if req.target != self.id { Err(format!("addressed to {}", req.target)) } else { self.apply(req) };
        let ack = match result {
            Ok(()) => AckMessage { request_id: req.request_id, status: AckStatus::Success, completed_at, reason: None },
            Err(reason) => AckMessage {
                request_id: req.request_id,
                status: AckStatus::Rejected,
                completed_at,
                reason: Some(reason),
            },
        };
        self.acks.insert(req.request_id, ack.clone());
        self.ack_order.push_back(req.request_id);
        if self.ack_order.len() > ACK_CACHE {
            if let Some(old) = self.ack_order.pop_front() {
                self.acks.remove(&old);
            }
        }
        debug_assert!(!self.state.airborne || self.state.armed);
        ack
    }

    fn apply(&mut self, req: &ServiceMessage) -> Result<(), String> {
        let st = &mut self.state;
        match req.service {
            ServiceName::ArmThrottle => {
                if st.armed {
                    return Err("already armed".into());
                }
                st.armed = true;
            }
            ServiceName::SetMode => {
                let mode: FlightMode = req.args.as_deref().ok_or("SET_MODE needs a mode")?.parse()?;
                if mode == FlightMode::Land && !st.airborne {
                    return Err("not airborne".into());
                }
                st.mode = mode;
            }
            ServiceName::Takeoff => {
                let altitude = match req.args.as_deref() {
                    None => self.config.takeoff_altitude_m,
                    Some(a) => a
                        .trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite() && *v > 0.0)
                        .ok_or_else(|| format!("bad takeoff altitude {a:?}"))?,
                };
                if !st.armed {
                    return Err("not armed".into());
                }
                if st.airborne {
                    return Err("already airborne".into());
                }
                st.airborne = true;
                st.mode = FlightMode::Guided;
                st.target_altitude_m = altitude;
            }
            ServiceName::Land => {
                if !st.airborne {
                    return Err("not airborne".into());
                }
                st.mode = FlightMode::Land;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::Mobility;

    fn node(state: FlightState, hz: f64) -> UavNode {
        UavNode::new(NodeId::uav(1), state, TopicSchedule::standard(hz), AutopilotConfig::default(), 0)
    }

    fn req(service: ServiceName, args: Option<&str>, id: u64) -> ServiceMessage {
        ServiceMessage { service, target: NodeId::uav(1), request_id: id, args: args.map(Into::into), issued_at: 0 }
    }

    #[test]
    fn disarmed_uav_stays_put_but_reports() {
        let mut n = node(FlightState::on_ground([5.0, 6.0, 0.0], 12.6), 3.0);
        n.state.mobility = Mobility::with_path([5.0, 6.0, 0.0], [[100.0, 0.0, 0.0]], 10.0);
        let msgs = n.autopilot_step(10 * SEC);
        assert!(!msgs.is_empty());
        assert_eq!(n.state.position(), [5.0, 6.0, 0.0]);
    }

    #[test]
    fn three_hz_for_ten_seconds() {
        let mut n = node(FlightState::on_ground([0.0; 3], 12.6), 3.0);
        let mut msgs = Vec::new();
        let mut t = 0;
        while t <= 10 * SEC {
            msgs.extend(n.autopilot_step(t));
            t += 7 * MS;
        }
        let position = msgs.iter().filter(|m| m.topic_name == "position").count();
        assert!((29..=31).contains(&position), "{position} position messages");
        let seqs: Vec<u64> = msgs.iter().filter(|m| m.topic_name == "battery").map(|m| m.seq).collect();
        assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1));
    }

    #[test]
    fn waypoint_arrival_time() {
        let mob = Mobility::with_path([0.0, 0.0, 20.0], [[300.0, 0.0, 20.0]], 10.0);
        let mut n = node(FlightState::flying(mob, 12.6), 3.0);
        let mut t = 0;
        while n.state.mobility.is_moving() {
            t = n.next_due();
            n.autopilot_step(t);
        }
        let arrival = t as f64 / SEC as f64;
        assert!((arrival - 30.0).abs() <= MOTION_STEP as f64 / SEC as f64, "arrived at {arrival}");
    }

    #[test]
    fn battery_never_increases() {
        let mut n = node(FlightState::on_ground([0.0; 3], 12.6), 6.0);
        let msgs = n.autopilot_step(60 * SEC);
        let volts: Vec<f64> = msgs
            .iter()
            .map(|m| match &m.payload {
                TopicPayload::Telemetry(t) => t.battery_voltage,
                _ => unreachable!(),
            })
            .collect();
        assert!(volts.windows(2).all(|w| w[1] <= w[0]));
        assert!(volts.last().unwrap() < &12.6);
    }

    #[test]
    fn arm_then_arm_again() {
        let mut n = node(FlightState::on_ground([0.0; 3], 12.6), 3.0);
        let ack = n.handle_service(&req(ServiceName::ArmThrottle, None, 1), 0);
        assert_eq!(ack.status, AckStatus::Success);
        assert!(n.state.armed);
        let ack = n.handle_service(&req(ServiceName::ArmThrottle, None, 2), 0);
        assert_eq!(ack.status, AckStatus::Rejected);
    }

    #[test]
    fn set_mode() {
        let mut n = node(FlightState::on_ground([0.0; 3], 12.6), 3.0);
        let ack = n.handle_service(&req(ServiceName::SetMode, Some("GUIDED"), 1), 5 * MS);
        assert_eq!(ack.status, AckStatus::Success);
        assert_eq!(ack.completed_at, 5 + n.config.state_change_ms);
        assert_eq!(n.state.mode, FlightMode::Guided);
        let before = n.state.clone();
        let ack = n.handle_service(&req(ServiceName::SetMode, Some("BOGUS"), 2), 0);
        assert_eq!(ack.status, AckStatus::Rejected);
        assert_eq!(n.state, before);
        let ack = n.handle_service(&req(ServiceName::SetMode, None, 3), 0);
        assert_eq!(ack.status, AckStatus::Rejected);
    }

    #[test]
    fn retransmitted_request_is_not_reexecuted() {
        let mut n = node(FlightState::on_ground([0.0; 3], 12.6), 3.0);
        let first = n.handle_service(&req(ServiceName::ArmThrottle, None, 9), 0);
        let again = n.handle_service(&req(ServiceName::ArmThrottle, None, 9), 50 * MS);
        assert_eq!(first, again);
        assert_eq!(again.status, AckStatus::Success);
    }

    #[test]
    fn takeoff_and_land_cycle() {
        let mut n = node(FlightState::on_ground([0.0; 3], 12.6), 3.0);
        assert_eq!(n.handle_service(&req(ServiceName::Takeoff, None, 1), 0).status, AckStatus::Rejected);
        n.handle_service(&req(ServiceName::ArmThrottle, None, 2), 0);
        assert_eq!(n.handle_service(&req(ServiceName::Takeoff, Some("x"), 3), 0).status, AckStatus::Rejected);
        assert_eq!(n.handle_service(&req(ServiceName::Takeoff, Some("8"), 4), 0).status, AckStatus::Success);
        n.autopilot_step(10 * SEC);
        assert_eq!(n.state.position()[2], 8.0);
        assert_eq!(n.handle_service(&req(ServiceName::Land, None, 5), 10 * SEC).status, AckStatus::Success);
        n.autopilot_step(20 * SEC);
        assert!(!n.state.airborne);
        assert!(n.state.armed);
        assert_eq!(n.handle_service(&req(ServiceName::Land, None, 6), 20 * SEC).status, AckStatus::Rejected);
    }

    #[test]
    fn wrong_target_rejected() {
        let mut n = node(FlightState::on_ground([0.0; 3], 12.6), 3.0);
        let mut r = req(ServiceName::ArmThrottle, None, 1);
        r.target = NodeId::uav(9);
        assert_eq!(n.handle_service(&r, 0).status, AckStatus::Rejected);
        assert!(!n.state.armed);
    }
}
