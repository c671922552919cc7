use std::collections::BTreeMap;

use crate::message::{NodeId, TopicAdvertisement};
use crate::time::{Nanos, SEC};

pub const DEFAULT_SYNC_PERIOD: Nanos = 2 * SEC;
/// Advertisements older than this many sync periods are forgotten.
pub const EXPIRY_PERIODS: u64 = 3;

#[derive(Clone, Debug)]
struct Advertised {
    topics: Vec<String>,
    sent_at: u64,
    heard_at: Nanos,
}

/// UAV-to-UAV communication module: which peer publishes which topic.
#[derive(Clone, Debug)]
pub struct TopicDirectory {
    owner: NodeId,
    own_topics: Vec<String>,
    sync_period: Nanos,
    peers: BTreeMap<NodeId, Advertised>,
}

impl TopicDirectory {
    pub fn new(owner: NodeId, own_topics: Vec<String>, sync_period: Nanos) -> Self {
        Self { owner, own_topics, sync_period, peers: BTreeMap::new() }
    }

    pub fn sync_period(&self) -> Nanos {
        self.sync_period
    }

    pub fn advertisement(&self, now_ms: u64) -> TopicAdvertisement {
        TopicAdvertisement { origin: self.owner, topics: self.own_topics.clone(), sent_at: now_ms }
    }

    /// Records a peer's advertisement; older-than-known ones are ignored.
    pub fn on_advertisement(&mut self, adv: &TopicAdvertisement, now: Nanos) -> bool {
        if adv.origin == self.owner {
            return false;
        }
        if let Some(known) = self.peers.get(&adv.origin) {
            if adv.sent_at < known.sent_at {
                return false;
            }
        }
        let changed = self.peers.get(&adv.origin).is_none_or(|k| k.topics != adv.topics);
        self.peers.insert(adv.origin, Advertised { topics: adv.topics.clone(), sent_at: adv.sent_at, heard_at: now });
        changed
    }

    pub fn expire(&mut self, now: Nanos) -> Vec<NodeId> {
        let limit = self.sync_period * EXPIRY_PERIODS;
        let gone: Vec<NodeId> =
            self.peers.iter().filter(|(_, a)| now.saturating_sub(a.heard_at) > limit).map(|(n, _)| *n).collect();
        for n in &gone {
            self.peers.remove(n);
        }
        gone
    }

    pub fn publishers_of(&self, topic: &str) -> Vec<NodeId> {
        let mut out: Vec<NodeId> =
            self.peers.iter().filter(|(_, a)| a.topics.iter().any(|t| t == topic)).map(|(n, _)| *n).collect();
        if self.own_topics.iter().any(|t| t == topic) {
            out.push(self.owner);
            out.sort();
        }
        out
    }

    pub fn peers(&self) -> impl Iterator<Item = (&NodeId, &[String])> {
        self.peers.iter().map(|(n, a)| (n, a.topics.as_slice()))
    }
}
