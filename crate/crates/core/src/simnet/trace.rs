//! Trace ingestion and synthetic trace generation.
//!
//! CSV format, LF line endings:
//!
//! ```text
//! t_us,src_ip,src_port,dst_ip,dst_port,proto,size_bytes
//! 0,10.0.0.5,1234,198.51.100.9,80,6,64
//! ```

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::addrspace::{Endpoint, FiveTuple, Ipv4Net, PortRange};

pub const TRACE_HEADER: &str = "t_us,src_ip,src_port,dst_ip,dst_port,proto,size_bytes";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {rule}")]
    Validation { line: usize, rule: String },
    #[error("{n_flows} flows requested but only {capacity} distinct tuples exist")]
    SpaceTooSmall { n_flows: u64, capacity: u128 },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub t_us: u64,
    pub tuple: FiveTuple,
    pub size_bytes: u16,
    /// Assigned by first appearance of the tuple, starting at 1. Not stored
    /// in the CSV.
    pub flow_id: u32,
}

/// Address spaces a trace is drawn from and validated against.
#[derive(Debug, Clone, Copy)]
pub struct TraceSpace {
    pub internal: Ipv4Net,
    pub internal_ports: PortRange,
    pub remote: Ipv4Net,
    pub remote_ports: PortRange,
    pub proto: u8,
    pub size_bytes: u16,
}

impl Default for TraceSpace {
    fn default() -> Self {
        Self {
            internal: "10.0.0.0/16".parse().unwrap(),
            internal_ports: PortRange::new(1024, 65535).unwrap(),
            remote: "198.51.100.0/24".parse().unwrap(),
            remote_ports: PortRange::new(1, 1023).unwrap(),
            proto: 6,
            size_bytes: 64,
        }
    }
}

impl TraceSpace {
    pub fn with_nets(internal: Ipv4Net, remote: Ipv4Net) -> Self {
        Self {
            internal,
            remote,
            ..Self::default()
        }
    }

    fn capacity(&self) -> u128 {
        self.internal.size() as u128
            * self.internal_ports.len() as u128
            * self.remote.size() as u128
            * self.remote_ports.len() as u128
    }
}

fn field<'a>(
    it: &mut impl Iterator<Item = &'a str>,
    line: usize,
    name: &str,
) -> Result<&'a str, TraceError> {
    it.next().map(str::trim).ok_or_else(|| TraceError::Parse {
        line,
        msg: format!("missing field `{name}`"),
    })
}

fn num<T: std::str::FromStr>(s: &str, line: usize, name: &str) -> Result<T, TraceError> {
    s.parse().map_err(|_| TraceError::Parse {
        line,
        msg: format!("bad {name} `{s}`"),
    })
}

fn ip(s: &str, line: usize, name: &str) -> Result<u32, TraceError> {
    s.parse::<Ipv4Addr>()
        .map(u32::from)
        .map_err(|_| TraceError::Parse {
            line,
            msg: format!("bad {name} `{s}`"),
        })
}

/// Parses and validates a trace. Sortedness and address-space membership are
/// checked against `space`; flow ids follow first appearance.
pub fn read_trace(reader: impl Read, space: &TraceSpace) -> Result<Vec<TraceRecord>, TraceError> {
    let reader = BufReader::new(reader);
    let mut ids: HashMap<FiveTuple, u32> = HashMap::new();
    let mut out = Vec::new();
    let mut last_t = 0u64;
    for (idx, line) in reader.lines().enumerate() {
        let n = idx + 1;
        let line = line.map_err(|e| TraceError::Parse {
            line: n,
            msg: e.to_string(),
        })?;
        if n == 1 {
            if line.trim() != TRACE_HEADER {
                return Err(TraceError::Parse {
                    line: 1,
                    msg: format!("expected header `{TRACE_HEADER}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let t_us: u64 = num(field(&mut it, n, "t_us")?, n, "t_us")?;
        let src_ip = ip(field(&mut it, n, "src_ip")?, n, "src_ip")?;
        let src_port: u16 = num(field(&mut it, n, "src_port")?, n, "src_port")?;
        let dst_ip = ip(field(&mut it, n, "dst_ip")?, n, "dst_ip")?;
        let dst_port: u16 = num(field(&mut it, n, "dst_port")?, n, "dst_port")?;
        let proto: u8 = num(field(&mut it, n, "proto")?, n, "proto")?;
        let size_bytes: u16 = num(field(&mut it, n, "size_bytes")?, n, "size_bytes")?;
        if it.next().is_some() {
            return Err(TraceError::Parse {
                line: n,
                msg: "too many fields".into(),
            });
        }

        if t_us < last_t {
            return Err(TraceError::Validation {
                line: n,
                rule: format!("timestamps not sorted ({t_us} after {last_t})"),
            });
        }
        last_t = t_us;
        if !space.internal.contains(src_ip) {
            return Err(TraceError::Validation {
                line: n,
                rule: format!(
                    "source {} outside internal space {}",
                    Ipv4Addr::from(src_ip),
                    space.internal
                ),
            });
        }
        if !space.remote.contains(dst_ip) {
            return Err(TraceError::Validation {
                line: n,
                rule: format!(
                    "destination {} outside remote space {}",
                    Ipv4Addr::from(dst_ip),
                    space.remote
                ),
            });
        }

        let tuple = FiveTuple::new(
            Endpoint::new(src_ip, src_port),
            Endpoint::new(dst_ip, dst_port),
            proto,
        );
        let next_id = ids.len() as u32 + 1;
        let flow_id = *ids.entry(tuple).or_insert(next_id);
        out.push(TraceRecord {
            t_us,
            tuple,
            size_bytes,
            flow_id,
        });
    }
    Ok(out)
}

pub fn load_trace(path: &Path, space: &TraceSpace) -> Result<Vec<TraceRecord>, TraceError> {
    let file = std::fs::File::open(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_trace(file, space)
}

pub fn write_trace(mut w: impl Write, records: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.t_us,
            r.tuple.src.addr(),
            r.tuple.src.port,
            r.tuple.dst.addr(),
            r.tuple.dst.port,
            r.tuple.proto,
            r.size_bytes
        )?;
    }
    Ok(())
}

/// `n_flows` distinct uniform tuples, `pkts_per_flow` packets each, sent
/// round-robin across flows at `rate_pps` aggregate. Deterministic per seed.
pub fn gen_trace(
    n_flows: u64,
    pkts_per_flow: u64,
    rate_pps: u64,
    seed: u64,
    space: &TraceSpace,
) -> Result<Vec<TraceRecord>, TraceError> {
    if n_flows == 0 {
        return Err(TraceError::NonPositive("n_flows"));
    }
    if pkts_per_flow == 0 {
        return Err(TraceError::NonPositive("pkts_per_flow"));
    }
    if rate_pps == 0 {
        return Err(TraceError::NonPositive("rate_pps"));
    }
    let capacity = space.capacity();
    if n_flows as u128 > capacity {
        return Err(TraceError::SpaceTooSmall { n_flows, capacity });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(n_flows as usize);
    let mut tuples = Vec::with_capacity(n_flows as usize);
    let draw = |rng: &mut ChaCha8Rng, net: Ipv4Net, ports: PortRange| {
        Endpoint::new(
            net.nth(rng.random_range(0..net.size())),
            rng.random_range(ports.lo..=ports.hi),
        )
    };
    while (tuples.len() as u64) < n_flows {
        let src = draw(&mut rng, space.internal, space.internal_ports);
        let dst = draw(&mut rng, space.remote, space.remote_ports);
        let tuple = FiveTuple::new(src, dst, space.proto);
        if seen.insert(tuple) {
            tuples.push(tuple);
        }
    }

    let total = n_flows * pkts_per_flow;
    Ok((0..total)
        .map(|k| {
            let flow = (k % n_flows) as usize;
            TraceRecord {
                t_us: (k as u128 * 1_000_000 / rate_pps as u128) as u64,
                tuple: tuples[flow],
                size_bytes: space.size_bytes,
                flow_id: flow as u32 + 1,
            }
        })
        .collect())
}
