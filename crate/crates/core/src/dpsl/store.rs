use std::collections::{BTreeMap, VecDeque};

use crate::message::{NodeId, TopicMessage};

pub const RING_SIZE: usize = 256;

#[derive(Clone, Debug)]
pub struct TopicEntry {
    pub latest: TopicMessage,
    pub ring: VecDeque<TopicMessage>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stored {
    New,
    /// `seq` not above the latest one already held.
    Duplicate,
}

/// Latest message and a bounded history per (UAV, topic).
#[derive(Clone, Debug)]
pub struct TopicStore {
    ring_size: usize,
    entries: BTreeMap<(NodeId, String), TopicEntry>,
}

impl Default for TopicStore {
    fn default() -> Self {
        Self::new(RING_SIZE)
    }
}

impl TopicStore {
    pub fn new(ring_size: usize) -> Self {
        assert!(ring_size > 0);
        Self { ring_size, entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, msg: &TopicMessage) -> Stored {
        let key = (msg.publisher, msg.topic_name.clone());
        match self.entries.get_mut(&key) {
            Some(e) if msg.seq <= e.latest.seq => Stored::Duplicate,
            Some(e) => {
                if e.ring.len() == self.ring_size {
                    e.ring.pop_front();
                }
                e.ring.push_back(msg.clone());
                e.latest = msg.clone();
                Stored::New
            }
            None => {
                self.entries.insert(key, TopicEntry { latest: msg.clone(), ring: VecDeque::from([msg.clone()]) });
                Stored::New
            }
        }
    }

    pub fn get(&self, uav: NodeId, topic: &str) -> Option<&TopicEntry> {
        self.entries.get(&(uav, topic.to_string()))
    }

    pub fn latest(&self, uav: NodeId, topic: &str) -> Option<&TopicMessage> {
        self.get(uav, topic).map(|e| &e.latest)
    }

    /// Highest stored seq per topic of `uav`.
    pub fn latest_seqs(&self, uav: NodeId) -> BTreeMap<String, u64> {
        self.entries
            .range((uav, String::new())..)
            .take_while(|((n, _), _)| *n == uav)
            .map(|((_, t), e)| (t.clone(), e.latest.seq))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(NodeId, String), &TopicEntry)> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{Telemetry, TopicPayload};

    pub(crate) fn msg(uav: u32, topic: &str, seq: u64) -> TopicMessage {
        TopicMessage {
            topic_name: topic.into(),
            publisher: NodeId::uav(uav),
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

    #[test]
    fn ring_keeps_last_n_and_latest_is_max() {
        let mut s = TopicStore::default();
        // 6 Hz for 100 s.
        for seq in 1..=600 {
            assert_eq!(s.insert(&msg(1, "battery", seq)), Stored::New);
        }
        let e = s.get(NodeId::uav(1), "battery").unwrap();
        assert_eq!(e.ring.len(), RING_SIZE);
        assert_eq!(e.latest.seq, 600);
        assert_eq!(e.ring.iter().map(|m| m.seq).max(), Some(600));
        assert_eq!(e.ring.front().unwrap().seq, 600 - RING_SIZE as u64 + 1);
    }

    #[test]
    fn duplicates_and_resume_points() {
        let mut s = TopicStore::default();
        s.insert(&msg(1, "position", 4));
        assert_eq!(s.insert(&msg(1, "position", 4)), Stored::Duplicate);
        assert_eq!(s.insert(&msg(1, "position", 2)), Stored::Duplicate);
        s.insert(&msg(1, "battery", 9));
        s.insert(&msg(2, "battery", 1));
        let seqs = s.latest_seqs(NodeId::uav(1));
        assert_eq!(seqs, BTreeMap::from([("battery".into(), 9), ("position".into(), 4)]));
    }
}
