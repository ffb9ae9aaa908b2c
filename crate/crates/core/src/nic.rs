//! Per-smartNIC protocol: NAT table, RuleBuilder and RuleAgent.
//!
//! Each NIC is a single-server FIFO. Every packet and every rule message
//! occupies the server for its cost (`busy_until` advances), while the time at
//! which a packet leaves is governed by a separate wire-to-wire latency. State
//! changes are applied in arrival order, which equals service order.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrspace::{Endpoint, FiveTuple, NicId, SubspaceAllocator, SubspacePlan};
use crate::hashing::{assign_nic, HashConfig};
use crate::simnet::packet::{Direction, Packet, Stamp};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NicError {
    #[error("packet {tuple} does not match rule for {direction:?} translation")]
    KeyMismatch {
        tuple: FiveTuple,
        direction: Direction,
    },
    #[error("message for {target} delivered to {nic}")]
    WrongTarget { target: NicId, nic: NicId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstallMode {
    /// The NIC that misses on a return packet fetches the rule from its owner.
    #[default]
    Passive,
    /// The rule creator pushes the rule to the NIC the return tuple hashes to.
    Active,
}

impl FromStr for InstallMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "passive" => Ok(InstallMode::Passive),
            "active" => Ok(InstallMode::Active),
            other => Err(format!("unknown install mode `{other}`")),
        }
    }
}

impl fmt::Display for InstallMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InstallMode::Passive => "passive",
            InstallMode::Active => "active",
        })
    }
}

/// Lookup key for outgoing packets: internal source, remote destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ForwardKey {
    pub internal: Endpoint,
    pub remote: Endpoint,
    pub proto: u8,
}

impl ForwardKey {
    pub fn of(tuple: &FiveTuple) -> Self {
        Self {
            internal: tuple.src,
            remote: tuple.dst,
            proto: tuple.proto,
        }
    }
}

/// Lookup key for incoming packets: remote source, external destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReverseKey {
    pub remote: Endpoint,
    pub external: Endpoint,
    pub proto: u8,
}

impl ReverseKey {
    pub fn of(tuple: &FiveTuple) -> Self {
        Self {
            remote: tuple.src,
            external: tuple.dst,
            proto: tuple.proto,
        }
    }
}

/// The binding shared by both directions of one connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NatRule {
    pub internal: Endpoint,
    pub external: Endpoint,
    pub remote: Endpoint,
    pub proto: u8,
    pub owner_nic: NicId,
}

impl NatRule {
    pub fn forward_key(&self) -> ForwardKey {
        ForwardKey {
            internal: self.internal,
            remote: self.remote,
            proto: self.proto,
        }
    }

    pub fn reverse_key(&self) -> ReverseKey {
        ReverseKey {
            remote: self.remote,
            external: self.external,
            proto: self.proto,
        }
    }

    /// `<R, E_i>`, the tuple the switch hashes for the return path.
    pub fn return_tuple(&self) -> FiveTuple {
        FiveTuple::new(self.remote, self.external, self.proto)
    }

    fn rewrite(&self, pkt: &mut Packet) -> Result<(), NicError> {
        let matches = match pkt.direction {
            Direction::Outgoing => ForwardKey::of(&pkt.tuple) == self.forward_key(),
            Direction::Incoming => ReverseKey::of(&pkt.tuple) == self.reverse_key(),
        };
        if !matches {
            return Err(NicError::KeyMismatch {
                tuple: pkt.tuple,
                direction: pkt.direction,
            });
        }
        match pkt.direction {
            Direction::Outgoing => pkt.tuple.src = self.external,
            Direction::Incoming => pkt.tuple.dst = self.internal,
        }
        Ok(())
    }
}

/// Outgoing: `src := external`. Incoming: `dst := internal`. Nothing else changes.
pub fn translate(rule: &NatRule, pkt: &Packet) -> Result<Packet, NicError> {
    let mut out = pkt.clone();
    rule.rewrite(&mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstalledRule {
    pub rule: NatRule,
    /// Translations with this rule cannot complete before this instant.
    pub ready_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Duplicate,
    /// A different rule already holds one of the keys; the table is unchanged.
    Conflict,
}

#[derive(Debug, Clone, Default)]
pub struct NatTable {
    forward: HashMap<ForwardKey, InstalledRule>,
    reverse: HashMap<ReverseKey, InstalledRule>,
}

impl NatTable {
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn lookup_forward(&self, key: &ForwardKey) -> Option<&InstalledRule> {
        self.forward.get(key)
    }

    pub fn lookup_reverse(&self, key: &ReverseKey) -> Option<&InstalledRule> {
        self.reverse.get(key)
    }

    pub fn insert(&mut self, rule: NatRule, ready_at: SimTime) -> InsertOutcome {
        let fwd = self.forward.get(&rule.forward_key()).map(|e| e.rule);
        let rev = self.reverse.get(&rule.reverse_key()).map(|e| e.rule);
        match (fwd, rev) {
            (None, None) => {
                let entry = InstalledRule { rule, ready_at };
                self.forward.insert(rule.forward_key(), entry);
                self.reverse.insert(rule.reverse_key(), entry);
                InsertOutcome::Inserted
            }
            (Some(a), Some(b)) if a == rule && b == rule => InsertOutcome::Duplicate,
            _ => InsertOutcome::Conflict,
        }
    }

    /// All rules, sorted by forward key.
    pub fn rules(&self) -> Vec<NatRule> {
        let mut v: Vec<_> = self.forward.values().map(|e| e.rule).collect();
        v.sort_by_key(|r| r.forward_key());
        v
    }

    /// Both maps hold exactly the same set of rules.
    pub fn is_symmetric(&self) -> bool {
        self.forward.len() == self.reverse.len()
            && self
                .forward
                .values()
                .all(|e| self.reverse.get(&e.rule.reverse_key()).map(|r| r.rule) == Some(e.rule))
    }
}

/// Body of a `<target_NIC_ID, rule>` message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RulePayload {
    Install {
        rule: NatRule,
    },
    FetchRequest {
        remote: Endpoint,
        external: Endpoint,
        proto: u8,
    },
    FetchReply {
        rule: NatRule,
    },
    FetchMiss {
        remote: Endpoint,
        external: Endpoint,
        proto: u8,
    },
}

impl RulePayload {
    fn request(key: ReverseKey) -> Self {
        RulePayload::FetchRequest {
            remote: key.remote,
            external: key.external,
            proto: key.proto,
        }
    }

    fn miss(key: ReverseKey) -> Self {
        RulePayload::FetchMiss {
            remote: key.remote,
            external: key.external,
            proto: key.proto,
        }
    }

    pub fn rule(&self) -> Option<&NatRule> {
        match self {
            RulePayload::Install { rule } | RulePayload::FetchReply { rule } => Some(rule),
            _ => None,
        }
    }

    pub fn request_key(&self) -> Option<ReverseKey> {
        match *self {
            RulePayload::FetchRequest {
                remote,
                external,
                proto,
            }
            | RulePayload::FetchMiss {
                remote,
                external,
                proto,
            } => Some(ReverseKey {
                remote,
                external,
                proto,
            }),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            RulePayload::Install { .. } => "install",
            RulePayload::FetchRequest { .. } => "fetch_request",
            RulePayload::FetchReply { .. } => "fetch_reply",
            RulePayload::FetchMiss { .. } => "fetch_miss",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMessage {
    pub target_nic_id: NicId,
    pub source_nic_id: NicId,
    #[serde(flatten)]
    pub payload: RulePayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// The owner subspace had no free external endpoint.
    Exhausted,
    /// No rule exists for an incoming packet anywhere.
    UnknownConnection,
    /// Active mode: the pushed rule had not arrived when the return packet did.
    ActiveMiss,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    /// A translated packet leaves the NIC at `at`.
    Transmit { pkt: Packet, at: SimTime },
    /// A rule message handed to the coordinator at `at`.
    Send { msg: RuleMessage, at: SimTime },
    Drop {
        pkt: Packet,
        reason: DropReason,
        at: SimTime,
    },
}

/// Occupancy (service) and latency parameters of one NAT element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ElementTiming {
    /// Server occupancy per packet pass.
    pub service: SimTime,
    /// Extra occupancy for building a rule.
    pub rule_build_cost: SimTime,
    /// Occupancy per rule message handled by the RuleAgent.
    pub agent_cost: SimTime,
    /// Arrival to departure for an outgoing table hit.
    pub out_latency: SimTime,
    /// Arrival to departure for an incoming table hit.
    pub in_latency: SimTime,
    /// Arrival to rule-ready (and departure) for an outgoing miss.
    pub rule_create: SimTime,
    /// Owner-side lookup before a fetch reply is sent.
    pub fetch_lookup: SimTime,
    /// Install to departure for packets held during a fetch.
    pub flush: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NicCounters {
    pub packets_in: u64,
    pub messages_in: u64,
    pub rule_creates: u64,
    pub installs_pushed: u64,
    pub installs_received: u64,
    pub fetch_requests: u64,
    pub fetches_served: u64,
    pub fetch_replies: u64,
    pub fetch_misses: u64,
    pub translated_out: u64,
    pub translated_in: u64,
    pub drops_exhausted: u64,
    pub drops_unknown: u64,
    pub drops_active_miss: u64,
    pub rule_conflicts: u64,
    pub busy_ns: u64,
}

impl NicCounters {
    pub fn drops(&self) -> u64 {
        self.drops_exhausted + self.drops_unknown + self.drops_active_miss
    }

    fn count_drop(&mut self, reason: DropReason) {
        match reason {
            DropReason::Exhausted => self.drops_exhausted += 1,
            DropReason::UnknownConnection => self.drops_unknown += 1,
            DropReason::ActiveMiss => self.drops_active_miss += 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NicState {
    id: NicId,
    plan: SubspacePlan,
    hash: HashConfig,
    mode: InstallMode,
    timing: ElementTiming,
    table: NatTable,
    allocator: SubspaceAllocator,
    pending: HashMap<ReverseKey, VecDeque<Packet>>,
    counters: NicCounters,
    busy_until: SimTime,
}

impl NicState {
    pub fn new(
        id: NicId,
        plan: SubspacePlan,
        hash: HashConfig,
        mode: InstallMode,
        timing: ElementTiming,
    ) -> Self {
        let allocator = plan.allocator(id);
        Self {
            id,
            plan,
            hash,
            mode,
            timing,
            table: NatTable::default(),
            allocator,
            pending: HashMap::new(),
            counters: NicCounters::default(),
            busy_until: SimTime::ZERO,
        }
    }

    pub fn id(&self) -> NicId {
        self.id
    }

    pub fn mode(&self) -> InstallMode {
        self.mode
    }

    pub fn table(&self) -> &NatTable {
        &self.table
    }

    pub fn allocator(&self) -> &SubspaceAllocator {
        &self.allocator
    }

    pub fn counters(&self) -> &NicCounters {
        &self.counters
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }

    pub fn pending_keys(&self) -> usize {
        self.pending.len()
    }

    pub fn pending_packets(&self) -> usize {
        self.pending.values().map(VecDeque::len).sum()
    }

    pub fn pending_for(&self, key: &ReverseKey) -> Option<&VecDeque<Packet>> {
        self.pending.get(key)
    }

    /// Removes every held packet, e.g. when a run hits its horizon.
    pub fn take_pending(&mut self) -> Vec<Packet> {
        let mut keys: Vec<_> = self.pending.keys().copied().collect();
        keys.sort();
        keys.into_iter()
            .flat_map(|k| self.pending.remove(&k).unwrap_or_default())
            .collect()
    }

    fn occupy(&mut self, now: SimTime, cost: SimTime) -> SimTime {
        let start = now.max(self.busy_until);
        self.busy_until = start + cost;
        self.counters.busy_ns += cost.nanos();
        start
    }

    fn message(&self, target: NicId, payload: RulePayload) -> RuleMessage {
        RuleMessage {
            target_nic_id: target,
            source_nic_id: self.id,
            payload,
        }
    }

    fn drop_packet(&mut self, pkt: Packet, reason: DropReason, at: SimTime, out: &mut Vec<Effect>) {
        self.counters.count_drop(reason);
        out.push(Effect::Drop { pkt, reason, at });
    }

    pub fn on_outgoing_packet(&mut self, now: SimTime, mut pkt: Packet, out: &mut Vec<Effect>) {
        debug_assert_eq!(pkt.direction, Direction::Outgoing);
        self.counters.packets_in += 1;
        let key = ForwardKey::of(&pkt.tuple);

        if let Some(entry) = self.table.lookup_forward(&key).copied() {
            let start = self.occupy(now, self.timing.service);
            pkt.stamp(Stamp::RuleInstalled, start.max(entry.ready_at));
            let at = (start + self.timing.out_latency).max(entry.ready_at);
            entry.rule.rewrite(&mut pkt).expect("forward key matched");
            self.counters.translated_out += 1;
            out.push(Effect::Transmit { pkt, at });
            return;
        }

        // RuleBuilder
        let external = match self.allocator.allocate(pkt.tuple) {
            Ok(ep) => ep,
            Err(_) => {
                let start = self.occupy(now, self.timing.service);
                self.drop_packet(pkt, DropReason::Exhausted, start, out);
                return;
            }
        };
        let start = self.occupy(now, self.timing.service + self.timing.rule_build_cost);
        let ready = start + self.timing.rule_create;
        let rule = NatRule {
            internal: key.internal,
            external,
            remote: key.remote,
            proto: key.proto,
            owner_nic: self.id,
        };
        let outcome = self.table.insert(rule, ready);
        debug_assert_eq!(outcome, InsertOutcome::Inserted);
        self.counters.rule_creates += 1;

        pkt.stamp(Stamp::RuleInstalled, ready);
        rule.rewrite(&mut pkt).expect("rule built from this packet");
        self.counters.translated_out += 1;
        out.push(Effect::Transmit { pkt, at: ready });

        if self.mode == InstallMode::Active {
            let target = assign_nic(&rule.return_tuple(), &self.hash);
            if target != self.id {
                self.counters.installs_pushed += 1;
                let msg = self.message(target, RulePayload::Install { rule });
                out.push(Effect::Send { msg, at: ready });
            }
        }
    }

    pub fn on_incoming_packet(&mut self, now: SimTime, mut pkt: Packet, out: &mut Vec<Effect>) {
        debug_assert_eq!(pkt.direction, Direction::Incoming);
        self.counters.packets_in += 1;
        let key = ReverseKey::of(&pkt.tuple);
        let start = self.occupy(now, self.timing.service);

        if let Some(entry) = self.table.lookup_reverse(&key).copied() {
            pkt.stamp(Stamp::AckRuleInstalled, start.max(entry.ready_at));
            let at = (start + self.timing.in_latency).max(entry.ready_at);
            entry.rule.rewrite(&mut pkt).expect("reverse key matched");
            self.counters.translated_in += 1;
            out.push(Effect::Transmit { pkt, at });
            return;
        }

        if let Some(queue) = self.pending.get_mut(&key) {
            queue.push_back(pkt);
            return;
        }

        match self.mode {
            InstallMode::Active => self.drop_packet(pkt, DropReason::ActiveMiss, start, out),
            InstallMode::Passive => match self.plan.owner_of(key.external) {
                Ok(owner) if owner != self.id => {
                    self.counters.fetch_requests += 1;
                    self.pending.insert(key, VecDeque::from([pkt]));
                    let msg = self.message(owner, RulePayload::request(key));
                    out.push(Effect::Send { msg, at: start });
                }
                // we own that endpoint and have no rule, or it is not ours to translate
                _ => self.drop_packet(pkt, DropReason::UnknownConnection, start, out),
            },
        }
    }

    pub fn on_rule_message(
        &mut self,
        now: SimTime,
        msg: RuleMessage,
        out: &mut Vec<Effect>,
    ) -> Result<(), NicError> {
        if msg.target_nic_id != self.id {
            return Err(NicError::WrongTarget {
                target: msg.target_nic_id,
                nic: self.id,
            });
        }
        self.counters.messages_in += 1;

        match msg.payload {
            RulePayload::Install { rule } | RulePayload::FetchReply { rule } => {
                if matches!(msg.payload, RulePayload::Install { .. }) {
                    self.counters.installs_received += 1;
                } else {
                    self.counters.fetch_replies += 1;
                }
                let start = now.max(self.busy_until);
                match self.table.insert(rule, start) {
                    InsertOutcome::Conflict => self.counters.rule_conflicts += 1,
                    InsertOutcome::Inserted | InsertOutcome::Duplicate => {}
                }
                // held packets already paid their service pass on arrival
                if let Some(held) = self.pending.remove(&rule.reverse_key()) {
                    let ready = self
                        .table
                        .lookup_reverse(&rule.reverse_key())
                        .map_or(start, |e| e.ready_at.max(start));
                    let installed = self
                        .table
                        .lookup_reverse(&rule.reverse_key())
                        .map(|e| e.rule);
                    for mut pkt in held {
                        match installed {
                            Some(r) => {
                                pkt.stamp(Stamp::AckRuleInstalled, ready);
                                r.rewrite(&mut pkt).expect("held under this reverse key");
                                self.counters.translated_in += 1;
                                out.push(Effect::Transmit {
                                    pkt,
                                    at: ready + self.timing.flush,
                                });
                            }
                            None => {
                                self.drop_packet(pkt, DropReason::UnknownConnection, start, out)
                            }
                        }
                    }
                }
                self.occupy(start, self.timing.agent_cost);
            }
            RulePayload::FetchRequest { .. } => {
                let key = msg
                    .payload
                    .request_key()
                    .expect("fetch request carries a key");
                let start = self.occupy(now, self.timing.agent_cost);
                self.counters.fetches_served += 1;
                let payload = match self.table.lookup_reverse(&key) {
                    Some(e) => RulePayload::FetchReply { rule: e.rule },
                    None => RulePayload::miss(key),
                };
                let reply = self.message(msg.source_nic_id, payload);
                out.push(Effect::Send {
                    msg: reply,
                    at: start + self.timing.fetch_lookup,
                });
            }
            RulePayload::FetchMiss { .. } => {
                let key = msg.payload.request_key().expect("fetch miss carries a key");
                let start = self.occupy(now, self.timing.agent_cost);
                self.counters.fetch_misses += 1;
                for pkt in self.pending.remove(&key).unwrap_or_default() {
                    self.drop_packet(pkt, DropReason::UnknownConnection, start, out);
                }
            }
        }
        Ok(())
    }
}
