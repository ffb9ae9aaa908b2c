//! Host-side router for rule messages between NICs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrspace::NicId;
use crate::nic::RuleMessage;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoordError {
    #[error("no NIC registered as {0}")]
    UnknownTarget(NicId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub msg: RuleMessage,
    pub at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoordinatorStats {
    pub messages_received: u64,
    pub messages_forwarded: u64,
    pub unknown_target_drops: u64,
    pub busy_ns: u64,
}

/// Reliable, in-order forwarding. Each hop (NIC to host, host to NIC) costs
/// `hop`; with a finite capacity each target link serializes messages
/// `per_message` apart.
#[derive(Debug, Clone)]
pub struct CoordinatorState {
    registered: BTreeSet<NicId>,
    hop: SimTime,
    per_message: SimTime,
    link_busy_until: BTreeMap<NicId, SimTime>,
    stats: CoordinatorStats,
}

impl CoordinatorState {
    pub fn new(nics: impl IntoIterator<Item = NicId>, hop: SimTime) -> Self {
        Self {
            registered: nics.into_iter().collect(),
            hop,
            per_message: SimTime::ZERO,
            link_busy_until: BTreeMap::new(),
            stats: CoordinatorStats::default(),
        }
    }

    /// Messages per second per target link; zero or negative means unlimited.
    pub fn with_capacity(mut self, messages_per_sec: f64) -> Self {
        self.per_message = if messages_per_sec > 0.0 {
            SimTime::from_us_f64(1e6 / messages_per_sec)
        } else {
            SimTime::ZERO
        };
        self
    }

    pub fn stats(&self) -> &CoordinatorStats {
        &self.stats
    }

    pub fn is_registered(&self, nic: NicId) -> bool {
        self.registered.contains(&nic)
    }

    /// Routes a message handed over by a NIC at `sent_at`.
    ///
    /// Must be called in non-decreasing `sent_at` order for FIFO delivery per
    /// directed NIC pair.
    pub fn route(&mut self, sent_at: SimTime, msg: RuleMessage) -> Result<Delivery, CoordError> {
        self.stats.messages_received += 1;
        let target = msg.target_nic_id;
        if !self.registered.contains(&target) {
            self.stats.unknown_target_drops += 1;
            return Err(CoordError::UnknownTarget(target));
        }
        let at_host = sent_at + self.hop;
        let link = self.link_busy_until.entry(target).or_insert(SimTime::ZERO);
        let depart = at_host.max(*link);
        *link = depart + self.per_message;
        self.stats.busy_ns += self.per_message.nanos();
        self.stats.messages_forwarded += 1;
        Ok(Delivery {
            msg,
            at: depart + self.hop,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addrspace::Endpoint;
    use crate::nic::RulePayload;

    fn fetch(from: u32, to: u32, port: u16) -> RuleMessage {
        RuleMessage {
            target_nic_id: NicId(to),
            source_nic_id: NicId(from),
            payload: RulePayload::FetchRequest {
                remote: Endpoint::new(1, 80),
                external: Endpoint::new(2, port),
                proto: 6,
            },
        }
    }

    #[test]
    fn delivers_after_two_hops() {
        let mut c = CoordinatorState::new([NicId(1), NicId(2)], SimTime::from_us(400));
        let d = c.route(SimTime::from_us(427), fetch(2, 1, 1)).unwrap();
        assert_eq!(d.at, SimTime::from_us(1227));
        assert_eq!(d.msg, fetch(2, 1, 1));
    }

    #[test]
    fn fifo_per_pair() {
        let mut c = CoordinatorState::new([NicId(1), NicId(2)], SimTime::from_us(400))
            .with_capacity(1e6 / 3.0);
        let a = c.route(SimTime::from_us(10), fetch(2, 1, 1)).unwrap();
        let b = c.route(SimTime::from_us(11), fetch(2, 1, 2)).unwrap();
        assert!(a.at < b.at);
        // capacity spacing of 3 us on the target link
        assert_eq!(b.at - a.at, SimTime::from_us(3));
    }

    #[test]
    fn unknown_target_dropped() {
        let mut c = CoordinatorState::new([NicId(1), NicId(2)], SimTime::from_us(400));
        assert_eq!(
            c.route(SimTime::ZERO, fetch(2, 9, 1)),
            Err(CoordError::UnknownTarget(NicId(9)))
        );
        c.route(SimTime::ZERO, fetch(2, 1, 1)).unwrap();
        let s = c.stats();
        assert_eq!(s.unknown_target_drops, 1);
        assert_eq!(
            s.messages_forwarded,
            s.messages_received - s.unknown_target_drops
        );
    }
}
