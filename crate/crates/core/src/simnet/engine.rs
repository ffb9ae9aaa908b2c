use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrspace::{partition, AddrError, Endpoint, NicId, SubspacePlan};
use crate::analytics::metrics::{
    percentiles, throughput, DropCounts, ElementUtilization, RttSample, RunMetrics,
};
use crate::coordinator::{CoordinatorState, CoordinatorStats};
use crate::hashing::{assign_nic, HashConfig};
use crate::nic::{DropReason, Effect, NicCounters, NicState, RuleMessage};
use crate::simnet::config::{ConfigError, FabricConfig};
use crate::simnet::packet::{Direction, Packet, Stamp};
use crate::simnet::trace::TraceRecord;
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("address plan: {0}")]
    Plan(#[from] AddrError),
    #[error("trace record {index}: {msg}")]
    Trace { index: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// `n_nics` smartNICs with rule cloning.
    HyperNat,
    /// A single smartNIC.
    OneNic,
    /// NAT on the host CPU behind one plain NIC.
    ServerNat,
}

impl Topology {
    pub const ALL: [Topology; 3] = [Topology::HyperNat, Topology::ServerNat, Topology::OneNic];

    pub fn name(self) -> &'static str {
        match self {
            Topology::HyperNat => "hypernat",
            Topology::OneNic => "onenic",
            Topology::ServerNat => "servernat",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hypernat" => Ok(Topology::HyperNat),
            "onenic" | "hypernat1" | "hypernat-1nic" => Ok(Topology::OneNic),
            "servernat" => Ok(Topology::ServerNat),
            other => Err(format!("unknown topology `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep per-packet named-event timestamps and emit an event log.
    pub record_events: bool,
}

/// One row of the event log: `pkt_seq,flow_id,event,kind,t_us`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRow {
    pub pkt_seq: u64,
    pub flow_id: u32,
    pub event: Stamp,
    pub t: SimTime,
}

impl EventRow {
    pub const CSV_HEADER: &'static str = "pkt_seq,flow_id,event,kind,t_us";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.pkt_seq,
            self.flow_id,
            self.event.name(),
            self.event.leg(),
            self.t
        )
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TdcReport {
    pub connections: u64,
    pub tdc_violations: u64,
    pub uniqueness_violations: u64,
    /// First few violations, for diagnosis.
    pub examples: Vec<String>,
}

impl TdcReport {
    pub fn pass(&self) -> bool {
        self.tdc_violations == 0 && self.uniqueness_violations == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub emitted: u64,
    pub returned: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.emitted == self.returned + self.dropped + self.in_flight
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NicReport {
    pub nic: NicId,
    pub counters: NicCounters,
    pub rules: usize,
    pub pending_at_horizon: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub topology: Topology,
    pub plan: SubspacePlan,
    pub metrics: RunMetrics,
    pub nics: Vec<NicReport>,
    pub coordinator: CoordinatorStats,
    pub tdc: TdcReport,
    pub conservation: Conservation,
    /// Per-connection external endpoint, by flow id.
    pub bindings: Vec<(u32, Endpoint)>,
    /// Per-packet timestamps, by packet seq. Only with `record_events`.
    pub journeys: Vec<(u64, u32, [Option<SimTime>; 10])>,
    pub events: Vec<EventRow>,
}

impl RunOutput {
    pub fn journey(&self, seq: u64) -> Option<&[Option<SimTime>; 10]> {
        self.journeys
            .binary_search_by_key(&seq, |j| j.0)
            .ok()
            .map(|i| &self.journeys[i].2)
    }

    pub fn event_log_csv(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 40 + 40);
        out.push_str(EventRow::CSV_HEADER);
        out.push('\n');
        for r in &self.events {
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        out
    }
}

enum EventKind {
    /// The sender/switch emulator emits trace record `idx`.
    ArriveAtSwitch(usize),
    ArriveAtNic(NicId, Packet),
    NicServiceDone(Packet),
    RuleMsgDelivery(RuleMessage),
    ArriveAtReceiver(Packet),
    ReceiverEcho(Packet),
    ReturnToSender(Packet),
}

struct Event {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// min-heap on (time, seq)
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Default)]
struct FlowAudit {
    internal: Endpoint,
    external: Option<Endpoint>,
}

#[derive(Default)]
struct TdcAudit {
    flows: HashMap<u32, FlowAudit>,
    owners: HashMap<Endpoint, u32>,
    report: TdcReport,
}

impl TdcAudit {
    fn violation(&mut self, tdc: bool, msg: String) {
        if tdc {
            self.report.tdc_violations += 1;
        } else {
            self.report.uniqueness_violations += 1;
        }
        if self.report.examples.len() < 16 {
            self.report.examples.push(msg);
        }
    }

    fn on_emit(&mut self, flow: u32, internal: Endpoint) {
        self.flows.entry(flow).or_insert_with(|| FlowAudit {
            internal,
            external: None,
        });
    }

    fn on_outgoing_translated(&mut self, flow: u32, external: Endpoint) {
        let seen = self
            .flows
            .get_mut(&flow)
            .map(|f| f.external.replace(external));
        match seen {
            Some(Some(prev)) if prev != external => self.violation(
                true,
                format!("flow {flow}: outgoing used {prev} then {external}"),
            ),
            Some(Some(_)) => {}
            _ => match self.owners.insert(external, flow) {
                Some(other) if other != flow => self.violation(
                    false,
                    format!("flows {other} and {flow} both hold {external}"),
                ),
                _ => {}
            },
        }
    }

    fn on_incoming_arrival(&mut self, flow: u32, dst: Endpoint) {
        let ext = self.flows.get(&flow).and_then(|f| f.external);
        if ext != Some(dst) {
            self.violation(
                true,
                format!("flow {flow}: return packet to {dst}, outgoing used {ext:?}"),
            );
        }
    }

    fn on_return(&mut self, flow: u32, dst: Endpoint) {
        let internal = self.flows.get(&flow).map(|f| f.internal);
        if internal != Some(dst) {
            self.violation(
                true,
                format!("flow {flow}: returned to {dst}, expected {internal:?}"),
            );
        }
    }
}

struct Engine<'a> {
    cfg: &'a FabricConfig,
    trace: &'a [TraceRecord],
    topology: Topology,
    opts: RunOptions,
    hash: HashConfig,
    nics: Vec<NicState>,
    coordinator: CoordinatorState,
    heap: BinaryHeap<Event>,
    next_seq: u64,
    effects: Vec<Effect>,
    audit: TdcAudit,
    rtts: Vec<RttSample>,
    drops: DropCounts,
    emitted: u64,
    returned: u64,
    translations: u64,
    window_start: Option<SimTime>,
    window_end: SimTime,
    journeys: Vec<(u64, u32, [Option<SimTime>; 10])>,
    send_times: Vec<SimTime>,
    flow_pkt: Vec<u32>,
}

impl<'a> Engine<'a> {
    fn schedule(&mut self, time: SimTime, kind: EventKind) {
        self.heap.push(Event {
            time,
            seq: self.next_seq,
            kind,
        });
        self.next_seq += 1;
    }

    fn send_time(&self, idx: usize) -> SimTime {
        if self.cfg.sender_rate_pps > 0.0 {
            SimTime((idx as f64 * 1e9 / self.cfg.sender_rate_pps).round() as u64)
        } else {
            SimTime::from_us(self.trace[idx].t_us)
        }
    }

    fn dispatch(&self, pkt: &Packet) -> NicId {
        match self.topology {
            Topology::HyperNat => assign_nic(&pkt.tuple, &self.hash),
            Topology::OneNic | Topology::ServerNat => NicId(1),
        }
    }

    fn nic_mut(&mut self, id: NicId) -> &mut NicState {
        &mut self.nics[id.0 as usize - 1]
    }

    fn finish(&mut self, pkt: &Packet) {
        if let Some(st) = pkt.stamps.as_deref() {
            self.journeys.push((pkt.seq, pkt.flow_id, *st));
        }
    }

    fn apply_effects(&mut self) {
        let mut effects = std::mem::take(&mut self.effects);
        for fx in effects.drain(..) {
            match fx {
                Effect::Transmit { mut pkt, at } => {
                    self.translations += 1;
                    self.window_end = self.window_end.max(at);
                    match pkt.direction {
                        Direction::Outgoing => {
                            pkt.stamp(Stamp::NicDepart, at);
                            self.audit
                                .on_outgoing_translated(pkt.flow_id, pkt.tuple.src);
                        }
                        Direction::Incoming => pkt.stamp(Stamp::AckNicDepart, at),
                    }
                    self.schedule(at, EventKind::NicServiceDone(pkt));
                }
                Effect::Send { msg, at } => {
                    if let Ok(d) = self.coordinator.route(at, msg) {
                        self.schedule(d.at, EventKind::RuleMsgDelivery(d.msg));
                    }
                }
                Effect::Drop { pkt, reason, .. } => {
                    match reason {
                        DropReason::Exhausted => self.drops.exhausted += 1,
                        DropReason::UnknownConnection => self.drops.unknown_connection += 1,
                        DropReason::ActiveMiss => self.drops.active_miss += 1,
                    }
                    self.finish(&pkt);
                }
            }
        }
        self.effects = effects;
    }

    fn handle(&mut self, now: SimTime, kind: EventKind) {
        let link = self.cfg.link();
        match kind {
            EventKind::ArriveAtSwitch(idx) => {
                let rec = &self.trace[idx];
                let mut pkt = Packet::new(rec.tuple, Direction::Outgoing);
                pkt.seq = idx as u64;
                pkt.flow_id = rec.flow_id;
                pkt.size_bytes = rec.size_bytes;
                pkt.created_at = now;
                if self.opts.record_events {
                    pkt = pkt.with_stamps();
                }
                pkt.flow_pkt = self.flow_pkt[idx];
                pkt.stamp(Stamp::Sent, now);
                self.emitted += 1;
                self.audit.on_emit(rec.flow_id, rec.tuple.src);
                let nic = self.dispatch(&pkt);
                self.schedule(now + link, EventKind::ArriveAtNic(nic, pkt));
                if idx + 1 < self.trace.len() {
                    let t = self.send_times[idx + 1];
                    self.schedule(t, EventKind::ArriveAtSwitch(idx + 1));
                }
            }
            EventKind::ArriveAtNic(id, mut pkt) => {
                self.window_start.get_or_insert(now);
                let mut fx = std::mem::take(&mut self.effects);
                match pkt.direction {
                    Direction::Outgoing => {
                        pkt.stamp(Stamp::NicArrive, now);
                        self.nic_mut(id).on_outgoing_packet(now, pkt, &mut fx);
                    }
                    Direction::Incoming => {
                        pkt.stamp(Stamp::AckNicArrive, now);
                        self.audit.on_incoming_arrival(pkt.flow_id, pkt.tuple.dst);
                        self.nic_mut(id).on_incoming_packet(now, pkt, &mut fx);
                    }
                }
                self.effects = fx;
                self.apply_effects();
            }
            EventKind::NicServiceDone(pkt) => match pkt.direction {
                Direction::Outgoing => self.schedule(now + link, EventKind::ArriveAtReceiver(pkt)),
                Direction::Incoming => self.schedule(now + link, EventKind::ReturnToSender(pkt)),
            },
            EventKind::RuleMsgDelivery(msg) => {
                let mut fx = std::mem::take(&mut self.effects);
                self.nic_mut(msg.target_nic_id)
                    .on_rule_message(now, msg, &mut fx)
                    .expect("coordinator routes to registered targets");
                self.effects = fx;
                self.apply_effects();
            }
            EventKind::ArriveAtReceiver(mut pkt) => {
                pkt.stamp(Stamp::ReceiverReceived, now);
                let at = now + self.cfg.receiver();
                self.schedule(at, EventKind::ReceiverEcho(pkt));
            }
            EventKind::ReceiverEcho(mut pkt) => {
                pkt.stamp(Stamp::ReceiverEcho, now);
                pkt.tuple = pkt.tuple.reversed();
                pkt.direction = Direction::Incoming;
                let nic = self.dispatch(&pkt);
                let at = now + self.cfg.echo_tx() + link;
                self.schedule(at, EventKind::ArriveAtNic(nic, pkt));
            }
            EventKind::ReturnToSender(mut pkt) => {
                pkt.stamp(Stamp::Returned, now);
                self.returned += 1;
                self.audit.on_return(pkt.flow_id, pkt.tuple.dst);
                self.rtts.push(RttSample {
                    rtt_us: (now - pkt.created_at).as_us_f64(),
                    first_of_flow: pkt.flow_pkt == 0,
                });
                self.finish(&pkt);
            }
        }
    }
}

/// Runs one experiment to completion or to the horizon (last send plus
/// `drain_us`).
pub fn run(
    cfg: &FabricConfig,
    trace: &[TraceRecord],
    topology: Topology,
    opts: RunOptions,
) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let n = match topology {
        Topology::HyperNat => cfg.n_nics,
        Topology::OneNic | Topology::ServerNat => 1,
    };
    let plan = partition(cfg.external_space(), n)?;
    let hash = HashConfig::new(n, cfg.hash_seed);
    let timing = match topology {
        Topology::ServerNat => cfg.server_timing(),
        _ => cfg.nic_timing(),
    };
    for (index, r) in trace.iter().enumerate() {
        if !cfg.internal_net.contains(r.tuple.src.ip) || !cfg.remote_net.contains(r.tuple.dst.ip) {
            return Err(SimError::Trace {
                index,
                msg: format!("{} is not internal -> remote", r.tuple),
            });
        }
    }

    let nics = (1..=n)
        .map(|i| NicState::new(NicId(i), plan.clone(), hash, cfg.install_mode, timing))
        .collect();
    let coordinator = CoordinatorState::new((1..=n).map(NicId), cfg.coord_hop())
        .with_capacity(cfg.coord_capacity_mps);

    let mut eng = Engine {
        cfg,
        trace,
        topology,
        opts,
        hash,
        nics,
        coordinator,
        heap: BinaryHeap::new(),
        next_seq: 0,
        effects: Vec::new(),
        audit: TdcAudit::default(),
        rtts: Vec::new(),
        drops: DropCounts::default(),
        emitted: 0,
        returned: 0,
        translations: 0,
        window_start: None,
        window_end: SimTime::ZERO,
        journeys: Vec::new(),
        send_times: Vec::new(),
        flow_pkt: Vec::new(),
    };
    eng.send_times = (0..trace.len()).map(|i| eng.send_time(i)).collect();
    for w in eng.send_times.windows(2) {
        if w[1] < w[0] {
            return Err(SimError::Trace {
                index: 0,
                msg: "send times not sorted".into(),
            });
        }
    }

    let mut per_flow: HashMap<u32, u32> = HashMap::new();
    eng.flow_pkt = trace
        .iter()
        .map(|r| {
            let c = per_flow.entry(r.flow_id).or_insert(0);
            *c += 1;
            *c - 1
        })
        .collect();

    let horizon = eng.send_times.last().copied().unwrap_or(SimTime::ZERO) + cfg.drain();
    if !trace.is_empty() {
        let t0 = eng.send_times[0];
        eng.schedule(t0, EventKind::ArriveAtSwitch(0));
    }

    while let Some(ev) = eng.heap.peek() {
        if ev.time > horizon {
            break;
        }
        let ev = eng.heap.pop().expect("peeked");
        eng.handle(ev.time, ev.kind);
    }

    // whatever is left is in flight at the horizon
    let mut in_flight = 0u64;
    let leftover: Vec<Event> = eng.heap.drain().collect();
    let mut leftover_pkts = Vec::new();
    for ev in leftover {
        match ev.kind {
            EventKind::ArriveAtNic(_, p)
            | EventKind::NicServiceDone(p)
            | EventKind::ArriveAtReceiver(p)
            | EventKind::ReceiverEcho(p)
            | EventKind::ReturnToSender(p) => {
                in_flight += 1;
                leftover_pkts.push(p);
            }
            EventKind::ArriveAtSwitch(_) | EventKind::RuleMsgDelivery(_) => {}
        }
    }
    for nic in &mut eng.nics {
        let held = nic.take_pending();
        in_flight += held.len() as u64;
        leftover_pkts.extend(held);
    }
    for p in &leftover_pkts {
        eng.finish(p);
    }

    let window_start = eng.window_start.unwrap_or(SimTime::ZERO);
    let window_end = eng.window_end.max(window_start);
    let span_us = (window_end - window_start).as_us_f64();
    let mut utilization: Vec<ElementUtilization> = eng
        .nics
        .iter()
        .map(|nic| {
            let busy_us = nic.counters().busy_ns as f64 / 1e3;
            ElementUtilization {
                element: match topology {
                    Topology::ServerNat => "server".to_string(),
                    _ => nic.id().to_string(),
                },
                busy_us,
                busy_fraction: if span_us > 0.0 {
                    busy_us / span_us
                } else {
                    0.0
                },
            }
        })
        .collect();
    if topology != Topology::ServerNat {
        let busy_us = eng.coordinator.stats().busy_ns as f64 / 1e3;
        utilization.push(ElementUtilization {
            element: "host".into(),
            busy_us,
            busy_fraction: if span_us > 0.0 {
                busy_us / span_us
            } else {
                0.0
            },
        });
    }

    let metrics = RunMetrics {
        translations: eng.translations,
        window_start_us: window_start.as_us_f64(),
        window_end_us: window_end.as_us_f64(),
        throughput_pps: throughput(
            eng.translations,
            window_start.as_us_f64(),
            window_end.as_us_f64(),
        ),
        emitted: eng.emitted,
        returned: eng.returned,
        in_flight,
        drops: eng.drops,
        rtt: percentiles(&eng.rtts),
        utilization,
        rtt_samples: std::mem::take(&mut eng.rtts),
    };
    let conservation = Conservation {
        emitted: eng.emitted,
        returned: eng.returned,
        dropped: eng.drops.total(),
        in_flight,
    };

    let nics = eng
        .nics
        .iter()
        .map(|nic| NicReport {
            nic: nic.id(),
            counters: *nic.counters(),
            rules: nic.table().len(),
            pending_at_horizon: nic.pending_packets(),
        })
        .collect();

    let mut bindings: Vec<(u32, Endpoint)> = eng
        .audit
        .flows
        .iter()
        .filter_map(|(f, a)| a.external.map(|e| (*f, e)))
        .collect();
    bindings.sort_unstable();
    let mut tdc = std::mem::take(&mut eng.audit.report);
    tdc.connections = eng.audit.flows.len() as u64;

    let mut journeys = std::mem::take(&mut eng.journeys);
    journeys.sort_unstable_by_key(|j| j.0);
    let events = if opts.record_events {
        journeys
            .iter()
            .flat_map(|(seq, flow, st)| {
                Stamp::ALL.into_iter().filter_map(move |s| {
                    st[s as usize].map(|t| EventRow {
                        pkt_seq: *seq,
                        flow_id: *flow,
                        event: s,
                        t,
                    })
                })
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(RunOutput {
        topology,
        plan,
        metrics,
        nics,
        coordinator: *eng.coordinator.stats(),
        tdc,
        conservation,
        bindings,
        journeys,
        events,
    })
}

/// Offers `trace` at `offered_pps` regardless of its own timestamps and
/// returns the run. Drain is extended so that the backlog can clear.
pub fn saturate(
    cfg: &FabricConfig,
    trace: &[TraceRecord],
    topology: Topology,
    offered_pps: f64,
) -> Result<RunOutput, SimError> {
    let mut c = cfg.clone();
    c.sender_rate_pps = offered_pps;
    c.drain_us = c.drain_us.max(10_000_000.0);
    run(&c, trace, topology, RunOptions::default())
}
