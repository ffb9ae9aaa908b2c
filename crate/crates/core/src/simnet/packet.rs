use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::addrspace::FiveTuple;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// internal -> remote, before translation the source is in the internal space
    Outgoing,
    /// remote -> external, before translation the destination is in `E`
    Incoming,
}

/// Named points along a packet's round trip. A trace packet and its echo
/// share one journey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stamp {
    Sent,
    NicArrive,
    RuleInstalled,
    NicDepart,
    ReceiverReceived,
    ReceiverEcho,
    AckNicArrive,
    AckRuleInstalled,
    AckNicDepart,
    Returned,
}

impl Stamp {
    pub const ALL: [Stamp; 10] = [
        Stamp::Sent,
        Stamp::NicArrive,
        Stamp::RuleInstalled,
        Stamp::NicDepart,
        Stamp::ReceiverReceived,
        Stamp::ReceiverEcho,
        Stamp::AckNicArrive,
        Stamp::AckRuleInstalled,
        Stamp::AckNicDepart,
        Stamp::Returned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stamp::Sent => "sent",
            Stamp::NicArrive => "nic_arrive",
            Stamp::RuleInstalled => "rule_installed",
            Stamp::NicDepart => "nic_depart",
            Stamp::ReceiverReceived => "receiver_received",
            Stamp::ReceiverEcho => "receiver_echo",
            Stamp::AckNicArrive => "ack_nic_arrive",
            Stamp::AckRuleInstalled => "ack_rule_installed",
            Stamp::AckNicDepart => "ack_nic_depart",
            Stamp::Returned => "returned",
        }
    }

    /// Leg of the journey: `out` until the receiver echoes, `in` afterwards.
    pub fn leg(self) -> &'static str {
        if self < Stamp::ReceiverEcho {
            "out"
        } else {
            "in"
        }
    }
}

impl FromStr for Stamp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stamp::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown event `{s}`"))
    }
}

impl fmt::Display for Stamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type Stamps = [Option<SimTime>; 10];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    /// Emission order at the sender; unique per run.
    pub seq: u64,
    /// Trace bookkeeping only. NAT logic never reads it.
    pub flow_id: u32,
    /// Index of this packet within its flow (0 for the first packet).
    pub flow_pkt: u32,
    pub tuple: FiveTuple,
    pub direction: Direction,
    pub size_bytes: u16,
    pub created_at: SimTime,
    pub stamps: Option<Box<Stamps>>,
}

impl Packet {
    pub fn new(tuple: FiveTuple, direction: Direction) -> Self {
        Self {
            seq: 0,
            flow_id: 0,
            flow_pkt: 0,
            tuple,
            direction,
            size_bytes: 64,
            created_at: SimTime::ZERO,
            stamps: None,
        }
    }

    pub fn with_stamps(mut self) -> Self {
        self.stamps = Some(Box::new([None; 10]));
        self
    }

    pub fn stamp(&mut self, which: Stamp, at: SimTime) {
        if let Some(st) = self.stamps.as_deref_mut() {
            st[which as usize] = Some(at);
        }
    }

    pub fn stamp_at(&self, which: Stamp) -> Option<SimTime> {
        self.stamps.as_deref().and_then(|st| st[which as usize])
    }
}
