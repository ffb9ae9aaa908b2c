//! Protocol property suites shared by `protocol_props` and `acceptance`.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use hypernat_core::nic::ReverseKey;
use hypernat_core::simnet::{
    run, Direction, FabricConfig, Packet, RunOptions, Topology, TraceRecord,
};
use hypernat_core::{
    partition, Effect, Endpoint, FiveTuple, HashConfig, InstallMode, NatRule, NicId, NicState,
    RuleMessage, RulePayload, SimTime,
};

pub const CASES: u32 = 1000;

pub fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

pub const REMOTE: u32 = 0xc633_6409; // 198.51.100.9

pub fn internal(i: u16) -> Endpoint {
    Endpoint::new(0x0a00_0000 + 5 + (i as u32 >> 8), 1024 + i)
}

/// A small trace: `(flow, gap_us)` pairs become sorted send times.
#[derive(Debug, Clone)]
pub struct SmallRun {
    pub trace: Vec<TraceRecord>,
    pub n_nics: u32,
    pub hash_seed: u64,
    pub mode: InstallMode,
    pub drain_us: f64,
    /// Ports per external IP; small values force exhaustion.
    pub ext_ports: u16,
}

impl SmallRun {
    pub fn config(&self) -> FabricConfig {
        FabricConfig {
            n_nics: self.n_nics,
            hash_seed: self.hash_seed,
            install_mode: self.mode,
            drain_us: self.drain_us,
            external_ports: format!("1024-{}", 1023 + self.ext_ports).parse().unwrap(),
            ..FabricConfig::default()
        }
    }
}

pub fn trace_of(sends: &[(u16, u64)]) -> Vec<TraceRecord> {
    let mut ids: HashMap<u16, u32> = HashMap::new();
    let mut t = 0;
    sends
        .iter()
        .map(|&(flow, gap)| {
            t += gap;
            let next = ids.len() as u32 + 1;
            TraceRecord {
                t_us: t,
                tuple: FiveTuple::new(internal(flow), Endpoint::new(REMOTE, 80 + flow % 7), 6),
                size_bytes: 64,
                flow_id: *ids.entry(flow).or_insert(next),
            }
        })
        .collect()
}

prop_compose! {
    pub fn small_run(max_flows: u16, full_space: bool)(
        sends in prop::collection::vec((0..max_flows, 0u64..3000), 1..40),
        n_nics in 1u32..=4,
        hash_seed in any::<u64>(),
        active in any::<bool>(),
        drain_us in prop_oneof![Just(1e7), 0.0..5000.0],
        ext_ports in if full_space { Just(64512u16).boxed() } else { prop_oneof![Just(64512u16), 1u16..=4].boxed() },
    ) -> SmallRun {
        SmallRun {
            trace: trace_of(&sends),
            n_nics,
            hash_seed,
            mode: if active { InstallMode::Active } else { InstallMode::Passive },
            drain_us,
            ext_ports,
        }
    }
}

fn run_small(r: &SmallRun, record_events: bool) -> hypernat_core::RunOutput {
    run(
        &r.config(),
        &r.trace,
        Topology::HyperNat,
        RunOptions { record_events },
    )
    .unwrap()
}

/// Passive and active installation end with the same bindings, and every
/// packet that makes it back is translated the same way.
pub fn mode_equivalence(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&small_run(12, true), |mut r| {
            r.n_nics = r.n_nics.max(2);
            r.drain_us = 1e7;
            r.mode = InstallMode::Passive;
            let p = run_small(&r, true);
            r.mode = InstallMode::Active;
            let a = run_small(&r, true);
            prop_assert_eq!(&p.bindings, &a.bindings);
            prop_assert!(p.tdc.pass() && a.tdc.pass());
            prop_assert_eq!(p.metrics.drops.total(), 0);
            // everything not dropped for an early return came back
            prop_assert_eq!(
                a.metrics.returned + a.metrics.drops.active_miss,
                a.metrics.emitted
            );
            let returned = |o: &hypernat_core::RunOutput| -> HashSet<u64> {
                o.journeys
                    .iter()
                    .filter(|j| j.2[hypernat_core::Stamp::Returned as usize].is_some())
                    .map(|j| j.0)
                    .collect()
            };
            let (rp, ra) = (returned(&p), returned(&a));
            prop_assert!(ra.is_subset(&rp));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn ack(ext: Endpoint, seq: u64) -> Packet {
    let mut p = Packet::new(
        FiveTuple::new(Endpoint::new(REMOTE, 80), ext, 6),
        Direction::Incoming,
    );
    p.seq = seq;
    p
}

fn nic(id: u32, n: u32, mode: InstallMode) -> NicState {
    let cfg = FabricConfig::default();
    let plan = partition(cfg.external_space(), n).unwrap();
    NicState::new(
        NicId(id),
        plan,
        HashConfig::new(n, 0),
        mode,
        cfg.nic_timing(),
    )
}

/// Endpoint `k` of NIC `owner`'s subspace.
fn owned(owner: u32, n: u32, k: u64) -> Endpoint {
    let cfg = FabricConfig::default();
    let plan = partition(cfg.external_space(), n).unwrap();
    let sub = plan.subspace(NicId(owner));
    plan.external_space().endpoint(sub.start + k % sub.len)
}

fn rule_for(ext: Endpoint, owner: u32, flow: u16) -> NatRule {
    NatRule {
        internal: internal(flow),
        external: ext,
        remote: Endpoint::new(REMOTE, 80),
        proto: 6,
        owner_nic: NicId(owner),
    }
}

/// Installing the same rule any number of times, by push or by fetch
/// reply, leaves exactly one entry.
pub fn idempotent_install(cases: u32) -> Result<(), String> {
    let strat = (
        2u32..=4,
        any::<u64>(),
        1usize..6,
        prop::collection::vec(any::<bool>(), 1..6),
    );
    runner(cases)
        .run(&strat, |(n, k, copies, kinds)| {
            let mut nic1 = nic(1, n, InstallMode::Active);
            let rule = rule_for(owned(2, n, k), 2, 7);
            let mut fx = Vec::new();
            for (i, reply) in kinds.iter().cycle().take(copies).enumerate() {
                let payload = if *reply {
                    RulePayload::FetchReply { rule }
                } else {
                    RulePayload::Install { rule }
                };
                let msg = RuleMessage {
                    target_nic_id: NicId(1),
                    source_nic_id: NicId(2),
                    payload,
                };
                nic1.on_rule_message(SimTime::from_us(10 * i as u64), msg, &mut fx)
                    .unwrap();
            }
            prop_assert_eq!(nic1.table().len(), 1);
            prop_assert_eq!(nic1.table().rules(), vec![rule]);
            prop_assert_eq!(nic1.counters().rule_conflicts, 0);
            prop_assert!(fx.is_empty());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

#[derive(Debug, Clone)]
pub enum Step {
    Arrive(u8),
    Reply(u8),
}

/// At most one fetch per reverse key is outstanding at any time.
pub fn single_outstanding_fetch(cases: u32) -> Result<(), String> {
    let step =
        prop_oneof![3 => (0u8..4).prop_map(Step::Arrive), 1 => (0u8..4).prop_map(Step::Reply)];
    let strat = (2u32..=4, prop::collection::vec(step, 1..60));
    runner(cases)
        .run(&strat, |(n, steps)| {
            let mut nic1 = nic(1, n, InstallMode::Passive);
            let mut outstanding: HashSet<ReverseKey> = HashSet::new();
            let mut seq = 0u64;
            let mut now = SimTime::ZERO;
            for s in steps {
                now += SimTime::from_us(3);
                let mut fx = Vec::new();
                match s {
                    Step::Arrive(k) => {
                        seq += 1;
                        let ext = owned(2, n, k as u64);
                        nic1.on_incoming_packet(now, ack(ext, seq), &mut fx);
                    }
                    Step::Reply(k) => {
                        let ext = owned(2, n, k as u64);
                        let rule = rule_for(ext, 2, k as u16);
                        let key = rule.reverse_key();
                        if !outstanding.contains(&key) {
                            continue;
                        }
                        let msg = RuleMessage {
                            target_nic_id: NicId(1),
                            source_nic_id: NicId(2),
                            payload: RulePayload::FetchReply { rule },
                        };
                        nic1.on_rule_message(now, msg, &mut fx).unwrap();
                        outstanding.remove(&key);
                    }
                }
                for e in &fx {
                    if let Effect::Send { msg, .. } = e {
                        let key = msg.payload.request_key().unwrap();
                        prop_assert!(outstanding.insert(key), "second fetch for {:?}", key);
                        prop_assert_eq!(msg.target_nic_id, NicId(2));
                    }
                }
                prop_assert_eq!(nic1.pending_keys(), outstanding.len());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Packets held behind a fetch leave in arrival order, never before the
/// rule is ready.
pub fn fifo_flush(cases: u32) -> Result<(), String> {
    let strat = (
        2u32..=4,
        any::<u64>(),
        prop::collection::vec(0u64..500, 1..30),
        0u64..5000,
    );
    runner(cases)
        .run(&strat, |(n, k, gaps, reply_after)| {
            let mut nic1 = nic(1, n, InstallMode::Passive);
            let ext = owned(2, n, k);
            let mut now = SimTime::ZERO;
            let mut fx = Vec::new();
            for (i, g) in gaps.iter().enumerate() {
                now += SimTime::from_us(*g);
                nic1.on_incoming_packet(now, ack(ext, i as u64), &mut fx);
            }
            let reply_at = now + SimTime::from_us(reply_after);
            fx.clear();
            let rule = rule_for(ext, 2, 0);
            let msg = RuleMessage {
                target_nic_id: NicId(1),
                source_nic_id: NicId(2),
                payload: RulePayload::FetchReply { rule },
            };
            nic1.on_rule_message(reply_at, msg, &mut fx).unwrap();
            let sent: Vec<(u64, SimTime)> = fx
                .iter()
                .filter_map(|e| match e {
                    Effect::Transmit { pkt, at } => Some((pkt.seq, *at)),
                    _ => None,
                })
                .collect();
            prop_assert_eq!(sent.len(), gaps.len());
            for (i, (seq, at)) in sent.iter().enumerate() {
                prop_assert_eq!(*seq, i as u64);
                prop_assert!(*at >= reply_at);
            }
            prop_assert!(sent.windows(2).all(|w| w[0].1 <= w[1].1));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// emitted = returned + dropped + in flight, whatever the horizon, mode or
/// space size; one RTT sample per returned packet.
pub fn conservation(cases: u32) -> Result<(), String> {
    use std::sync::atomic::{AtomicU64, Ordering::Relaxed};
    // (exhausted, active miss, in flight, cases): the partition must be
    // exercised in every part, not only the happy path
    let seen: [AtomicU64; 4] = Default::default();
    runner(cases)
        .run(&small_run(40, false), |r| {
            let out = run_small(&r, false);
            let c = out.conservation;
            let d = out.metrics.drops;
            seen[0].fetch_add((d.exhausted > 0) as u64, Relaxed);
            seen[1].fetch_add((d.active_miss > 0) as u64, Relaxed);
            seen[2].fetch_add((c.in_flight > 0) as u64, Relaxed);
            seen[3].fetch_add(1, Relaxed);
            prop_assert!(c.holds(), "{:?}", c);
            prop_assert_eq!(c.emitted, r.trace.len() as u64);
            prop_assert_eq!(out.metrics.rtt_samples.len() as u64, c.returned);
            prop_assert!(out.tdc.pass(), "{:?}", out.tdc.examples);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let seen: Vec<u64> = seen.iter().map(|a| a.load(Relaxed)).collect();
    if seen[..3].contains(&0) || seen[3] < cases as u64 {
        return Err(format!("partition not fully exercised: {seen:?}"));
    }
    Ok(())
}

/// Same inputs, same event log and metrics, bit for bit.
pub fn bit_identical_reruns(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&small_run(20, false), |r| {
            let a = run_small(&r, true);
            let b = run_small(&r, true);
            prop_assert_eq!(a.event_log_csv(), b.event_log_csv());
            prop_assert_eq!(
                serde_json::to_string(&a.metrics).unwrap(),
                serde_json::to_string(&b.metrics).unwrap()
            );
            prop_assert_eq!(a.metrics.rtt_samples, b.metrics.rtt_samples);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub type Suite = fn(u32) -> Result<(), String>;

pub const SUITES: &[(&str, Suite)] = &[
    ("passive/active equivalence", mode_equivalence),
    ("idempotent install", idempotent_install),
    ("single outstanding fetch", single_outstanding_fetch),
    ("FIFO flush order", fifo_flush),
    ("conservation partition", conservation),
    ("bit-identical reruns", bit_identical_reruns),
];
