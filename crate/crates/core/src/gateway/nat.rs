use std::collections::BTreeMap;
use std::net::SocketAddrV4;

use thiserror::Error;

use crate::time::{Nanos, SEC};

pub const DEFAULT_IDLE_TIMEOUT: Nanos = 60 * SEC;
pub const PORT_MIN: u16 = 1024;
pub const PORT_MAX: u16 = 65535;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum NatError {
    #[error("NAT table full")]
    Full,
    #[error("no mapping for uplink port {0}")]
    UnknownMapping(u16),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Entry {
    port: u16,
    last_used: Nanos,
}

/// Source-address translation: each inner (address, port) shares the uplink
/// address under its own uplink port.
#[derive(Clone, Debug)]
pub struct NatTable {
    forward: BTreeMap<SocketAddrV4, Entry>,
    reverse: BTreeMap<u16, SocketAddrV4>,
    capacity: usize,
    idle_timeout: Nanos,
    next_port: u16,
}

impl NatTable {
    pub fn new(capacity: usize, idle_timeout: Nanos) -> Self {
        let capacity = capacity.min((PORT_MAX - PORT_MIN) as usize + 1);
        Self { forward: BTreeMap::new(), reverse: BTreeMap::new(), capacity, idle_timeout, next_port: PORT_MIN }
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Uplink port for an outbound packet from `inner`, allocating on first use.
    pub fn outbound(&mut self, inner: SocketAddrV4, now: Nanos) -> Result<u16, NatError> {
        if let Some(e) = self.forward.get_mut(&inner) {
            e.last_used = now;
            return Ok(e.port);
        }
        self.expire(now);
        if self.forward.len() >= self.capacity {
            return Err(NatError::Full);
        }
        let mut port = self.next_port;
        while self.reverse.contains_key(&port) {
            port = if port == PORT_MAX { PORT_MIN } else { port + 1 };
        }
        self.next_port = if port == PORT_MAX { PORT_MIN } else { port + 1 };
        self.forward.insert(inner, Entry { port, last_used: now });
        self.reverse.insert(port, inner);
        Ok(port)
    }

    /// Inner endpoint for an inbound packet addressed to `port`.
    pub fn inbound(&mut self, port: u16, now: Nanos) -> Result<SocketAddrV4, NatError> {
        let inner = *self.reverse.get(&port).ok_or(NatError::UnknownMapping(port))?;
        let e = self.forward.get_mut(&inner).expect("reverse entry has forward twin");
        if now.saturating_sub(e.last_used) > self.idle_timeout {
            return Err(NatError::UnknownMapping(port));
        }
        e.last_used = now;
        Ok(inner)
    }

    /// Drops entries idle for longer than the timeout; returns how many.
    pub fn expire(&mut self, now: Nanos) -> usize {
        let timeout = self.idle_timeout;
        let stale: Vec<SocketAddrV4> =
            self.forward.iter().filter(|(_, e)| now.saturating_sub(e.last_used) > timeout).map(|(k, _)| *k).collect();
        for k in &stale {
            let e = self.forward.remove(k).unwrap();
            self.reverse.remove(&e.port);
        }
        stale.len()
    }

    /// Both maps describe the same one-to-one relation.
    pub fn is_bijective(&self) -> bool {
        self.forward.len() == self.reverse.len()
            && self.forward.iter().all(|(inner, e)| self.reverse.get(&e.port) == Some(inner))
    }

    pub fn entries(&self) -> impl Iterator<Item = (SocketAddrV4, u16)> + '_ {
        self.forward.iter().map(|(k, e)| (*k, e.port))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn inner(host: u8, port: u16) -> SocketAddrV4 {
        SocketAddrV4::new(Ipv4Addr::new(10, 0, 1, host), port)
    }

    #[test]
    fn first_packet_allocates_one_entry() {
        let mut nat = NatTable::new(16, DEFAULT_IDLE_TIMEOUT);
        let p = nat.outbound(inner(2, 5000), 0).unwrap();
        assert_eq!(nat.outbound(inner(2, 5000), SEC).unwrap(), p);
        assert_eq!(nat.len(), 1);
        assert_eq!(nat.inbound(p, 2 * SEC).unwrap(), inner(2, 5000));
    }

    #[test]
    fn full_and_unknown() {
        let mut nat = NatTable::new(2, SEC);
        nat.outbound(inner(2, 1), 0).unwrap();
        nat.outbound(inner(3, 1), 0).unwrap();
        assert_eq!(nat.outbound(inner(4, 1), 0), Err(NatError::Full));
        assert_eq!(nat.inbound(9, 0), Err(NatError::UnknownMapping(9)));
        // Idle entries make room.
        assert!(nat.outbound(inner(4, 1), 2 * SEC).is_ok());
        assert_eq!(nat.len(), 1);
    }

    #[test]
    fn idle_mapping_not_usable_inbound() {
        let mut nat = NatTable::new(4, SEC);
        let p = nat.outbound(inner(2, 1), 0).unwrap();
        assert_eq!(nat.inbound(p, SEC + 1), Err(NatError::UnknownMapping(p)));
    }
}
