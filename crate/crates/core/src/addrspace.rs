//! Endpoints, five-tuples and the partition of the external address space.
//!
//! The external space `E` is an ordered range of (IPv4, port) pairs. Canonical
//! order is lexicographic on `(ip, port)`: every port of the first address,
//! then every port of the next one. A [`SubspacePlan`] splits that order into
//! `N` contiguous, disjoint slices, one per NIC, and each NIC hands out
//! addresses from its slice through a [`SubspaceAllocator`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddrError {
    #[error("external space of {size} endpoints cannot be split across {n} NICs")]
    EmptySpace { size: u64, n: u32 },
    #[error("subspace of {0} has no free endpoint")]
    SubspaceExhausted(NicId),
    #[error("endpoint {0} is not allocated")]
    NotAllocated(Endpoint),
    #[error("endpoint {0} is outside the external space")]
    NotInExternalSpace(Endpoint),
    #[error("invalid network `{0}`")]
    InvalidNet(String),
    #[error("invalid port range `{0}`")]
    InvalidPorts(String),
}

/// Identifier of a NIC and of the subspace it owns, in `1..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NicId(pub u32);

impl fmt::Display for NicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "nic{}", self.0)
    }
}

/// IPv4 address (host order) and port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Endpoint {
    pub ip: u32,
    pub port: u16,
}

impl Endpoint {
    pub const fn new(ip: u32, port: u16) -> Self {
        Self { ip, port }
    }

    pub fn addr(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.ip)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.addr(), self.port)
    }
}

impl Serialize for Endpoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let (ip, port) = s
            .rsplit_once(':')
            .ok_or_else(|| serde::de::Error::custom("expected ip:port"))?;
        let ip: Ipv4Addr = ip.parse().map_err(serde::de::Error::custom)?;
        let port: u16 = port.parse().map_err(serde::de::Error::custom)?;
        Ok(Endpoint::new(ip.into(), port))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FiveTuple {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub proto: u8,
}

impl FiveTuple {
    pub const fn new(src: Endpoint, dst: Endpoint, proto: u8) -> Self {
        Self { src, dst, proto }
    }

    /// The tuple of a reply: source and destination swapped.
    pub const fn reversed(&self) -> Self {
        Self {
            src: self.dst,
            dst: self.src,
            proto: self.proto,
        }
    }
}

impl fmt::Display for FiveTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{} -> {} /{}>", self.src, self.dst, self.proto)
    }
}

/// An IPv4 prefix such as `10.0.0.0/16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Net {
    base: u32,
    prefix: u8,
}

impl Ipv4Net {
    pub fn new(addr: u32, prefix: u8) -> Result<Self, AddrError> {
        if prefix > 32 {
            return Err(AddrError::InvalidNet(format!(
                "{}/{prefix}",
                Ipv4Addr::from(addr)
            )));
        }
        let mask = if prefix == 0 {
            0
        } else {
            u32::MAX << (32 - prefix)
        };
        Ok(Self {
            base: addr & mask,
            prefix,
        })
    }

    pub fn first(&self) -> u32 {
        self.base
    }

    pub fn size(&self) -> u64 {
        1u64 << (32 - self.prefix)
    }

    pub fn contains(&self, ip: u32) -> bool {
        (ip as u64).wrapping_sub(self.base as u64) < self.size()
    }

    pub fn nth(&self, i: u64) -> u32 {
        debug_assert!(i < self.size());
        self.base + i as u32
    }
}

impl FromStr for Ipv4Net {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AddrError::InvalidNet(s.to_string());
        let (addr, prefix) = match s.split_once('/') {
            Some((a, p)) => (a, p.parse::<u8>().map_err(|_| bad())?),
            None => (s, 32),
        };
        let addr: Ipv4Addr = addr.trim().parse().map_err(|_| bad())?;
        Ipv4Net::new(addr.into(), prefix).map_err(|_| bad())
    }
}

impl fmt::Display for Ipv4Net {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", Ipv4Addr::from(self.base), self.prefix)
    }
}

macro_rules! serde_via_str {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                String::deserialize(d)?
                    .parse()
                    .map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_via_str!(Ipv4Net);
serde_via_str!(PortRange);

/// Inclusive port range `lo-hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortRange {
    pub lo: u16,
    pub hi: u16,
}

impl PortRange {
    pub fn new(lo: u16, hi: u16) -> Result<Self, AddrError> {
        if lo > hi {
            return Err(AddrError::InvalidPorts(format!("{lo}-{hi}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> u64 {
        (self.hi - self.lo) as u64 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, port: u16) -> bool {
        (self.lo..=self.hi).contains(&port)
    }
}

impl FromStr for PortRange {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AddrError::InvalidPorts(s.to_string());
        let (lo, hi) = match s.split_once('-') {
            Some((lo, hi)) => (lo.trim(), hi.trim()),
            None => (s.trim(), s.trim()),
        };
        PortRange::new(
            lo.parse().map_err(|_| bad())?,
            hi.parse().map_err(|_| bad())?,
        )
    }
}

impl fmt::Display for PortRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

/// A set of addresses crossed with a port range, enumerated in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndpointSpace {
    first_ip: u32,
    ip_count: u64,
    ports: PortRange,
}

impl EndpointSpace {
    pub fn new(first_ip: u32, ip_count: u64, ports: PortRange) -> Self {
        assert!(ip_count >= 1 && first_ip as u64 + ip_count <= 1 << 32);
        Self {
            first_ip,
            ip_count,
            ports,
        }
    }

    pub fn from_net(net: Ipv4Net, ports: PortRange) -> Self {
        Self::new(net.first(), net.size(), ports)
    }

    pub fn len(&self) -> u64 {
        self.ip_count * self.ports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ports(&self) -> PortRange {
        self.ports
    }

    /// Endpoint at canonical position `i`.
    pub fn endpoint(&self, i: u64) -> Endpoint {
        debug_assert!(i < self.len());
        let per_ip = self.ports.len();
        Endpoint::new(
            self.first_ip + (i / per_ip) as u32,
            self.ports.lo + (i % per_ip) as u16,
        )
    }

    /// Canonical position of `ep`, if it belongs to the space.
    pub fn position(&self, ep: Endpoint) -> Option<u64> {
        let ip_off = (ep.ip as u64).checked_sub(self.first_ip as u64)?;
        if ip_off >= self.ip_count || !self.ports.contains(ep.port) {
            return None;
        }
        Some(ip_off * self.ports.len() + (ep.port - self.ports.lo) as u64)
    }

    pub fn contains(&self, ep: Endpoint) -> bool {
        self.position(ep).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = Endpoint> + '_ {
        (0..self.len()).map(|i| self.endpoint(i))
    }
}

/// Contiguous positions `[start, start + len)` of the external space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Subspace {
    pub id: NicId,
    pub start: u64,
    pub len: u64,
}

/// The split of `E` into `N` disjoint contiguous subspaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubspacePlan {
    space: EndpointSpace,
    n: u32,
}

/// Equal contiguous split; the first `|E| mod n` subspaces get one extra endpoint.
pub fn partition(space: EndpointSpace, n: u32) -> Result<SubspacePlan, AddrError> {
    if n == 0 || space.len() < n as u64 {
        return Err(AddrError::EmptySpace {
            size: space.len(),
            n,
        });
    }
    Ok(SubspacePlan { space, n })
}

impl SubspacePlan {
    pub fn external_space(&self) -> &EndpointSpace {
        &self.space
    }

    pub fn n_nics(&self) -> u32 {
        self.n
    }

    fn split(&self) -> (u64, u64) {
        let total = self.space.len();
        (total / self.n as u64, total % self.n as u64)
    }

    pub fn subspace(&self, id: NicId) -> Subspace {
        assert!(id.0 >= 1 && id.0 <= self.n, "no subspace {id}");
        let (base, rem) = self.split();
        let k = (id.0 - 1) as u64;
        let start = k * base + k.min(rem);
        let len = base + u64::from(k < rem);
        Subspace { id, start, len }
    }

    pub fn subspaces(&self) -> impl Iterator<Item = Subspace> + '_ {
        (1..=self.n).map(|i| self.subspace(NicId(i)))
    }

    pub fn owner_of(&self, ep: Endpoint) -> Result<NicId, AddrError> {
        let pos = self
            .space
            .position(ep)
            .ok_or(AddrError::NotInExternalSpace(ep))?;
        let (base, rem) = self.split();
        let wide = rem * (base + 1);
        let k = if pos < wide {
            pos / (base + 1)
        } else {
            rem + (pos - wide) / base
        };
        Ok(NicId(k as u32 + 1))
    }

    pub fn allocator(&self, id: NicId) -> SubspaceAllocator {
        SubspaceAllocator::new(self.space, self.subspace(id))
    }

    /// Per-NIC boundaries, as written to run reports.
    pub fn summary(&self) -> Vec<SubspaceSummary> {
        self.subspaces()
            .map(|s| SubspaceSummary {
                nic: s.id,
                first: self.space.endpoint(s.start),
                last: self.space.endpoint(s.start + s.len - 1),
                size: s.len,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceSummary {
    pub nic: NicId,
    pub first: Endpoint,
    pub last: Endpoint,
    pub size: u64,
}

/// Lowest-free allocation over one subspace.
///
/// Free endpoints are the positions at or above `cursor` plus those in
/// `released`; everything else in the subspace is in `allocated`.
#[derive(Debug, Clone)]
pub struct SubspaceAllocator {
    space: EndpointSpace,
    sub: Subspace,
    cursor: u64,
    released: BTreeSet<u64>,
    allocated: HashMap<Endpoint, FiveTuple>,
}

impl SubspaceAllocator {
    pub fn new(space: EndpointSpace, sub: Subspace) -> Self {
        Self {
            space,
            sub,
            cursor: 0,
            released: BTreeSet::new(),
            allocated: HashMap::new(),
        }
    }

    pub fn id(&self) -> NicId {
        self.sub.id
    }

    pub fn capacity(&self) -> u64 {
        self.sub.len
    }

    pub fn free_count(&self) -> u64 {
        self.sub.len - self.allocated.len() as u64
    }

    pub fn allocated_count(&self) -> usize {
        self.allocated.len()
    }

    pub fn holder(&self, ep: Endpoint) -> Option<&FiveTuple> {
        self.allocated.get(&ep)
    }

    fn offset_of(&self, ep: Endpoint) -> Option<u64> {
        let pos = self.space.position(ep)?;
        let off = pos.checked_sub(self.sub.start)?;
        (off < self.sub.len).then_some(off)
    }

    pub fn is_free(&self, ep: Endpoint) -> bool {
        match self.offset_of(ep) {
            Some(off) => off >= self.cursor || self.released.contains(&off),
            None => false,
        }
    }

    /// Free endpoints in canonical order.
    pub fn free(&self) -> Vec<Endpoint> {
        self.released
            .iter()
            .copied()
            .chain(self.cursor..self.sub.len)
            .map(|off| self.space.endpoint(self.sub.start + off))
            .collect()
    }

    /// Hands the lowest free endpoint to `flow`.
    pub fn allocate(&mut self, flow: FiveTuple) -> Result<Endpoint, AddrError> {
        let off = if let Some(off) = self.released.pop_first() {
            off
        } else if self.cursor < self.sub.len {
            self.cursor += 1;
            self.cursor - 1
        } else {
            return Err(AddrError::SubspaceExhausted(self.sub.id));
        };
        let ep = self.space.endpoint(self.sub.start + off);
        let prev = self.allocated.insert(ep, flow);
        debug_assert!(prev.is_none());
        Ok(ep)
    }

    pub fn release(&mut self, ep: Endpoint) -> Result<(), AddrError> {
        if self.allocated.remove(&ep).is_none() {
            return Err(AddrError::NotAllocated(ep));
        }
        let off = self
            .offset_of(ep)
            .expect("allocated endpoint lies in subspace");
        self.released.insert(off);
        // fold trailing releases back into the cursor so a full round trip
        // restores the initial representation
        while self.cursor > 0 && self.released.remove(&(self.cursor - 1)) {
            self.cursor -= 1;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ports(lo: u16, hi: u16) -> EndpointSpace {
        EndpointSpace::new(0, 1, PortRange::new(lo, hi).unwrap())
    }

    fn flow(n: u16) -> FiveTuple {
        FiveTuple::new(
            Endpoint::new(0x0a00_0001, n),
            Endpoint::new(0xc633_6409, 80),
            6,
        )
    }

    #[test]
    fn partition_equal_contiguous() {
        let plan = partition(ports(0, 99), 4).unwrap();
        let subs: Vec<_> = plan.subspaces().collect();
        assert_eq!(subs.len(), 4);
        for (k, s) in subs.iter().enumerate() {
            assert_eq!(s.start, 25 * k as u64);
            assert_eq!(s.len, 25);
        }
    }

    #[test]
    fn partition_single_nic_is_identity() {
        let space = ports(1000, 1999);
        let plan = partition(space, 1).unwrap();
        let s = plan.subspace(NicId(1));
        assert_eq!((s.start, s.len), (0, space.len()));
    }

    #[test]
    fn partition_remainder_goes_to_lowest_ids() {
        let plan = partition(ports(0, 9), 3).unwrap();
        let sizes: Vec<_> = plan.subspaces().map(|s| s.len).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
    }

    #[test]
    fn partition_rejects_small_space() {
        assert_eq!(
            partition(ports(0, 1), 3),
            Err(AddrError::EmptySpace { size: 2, n: 3 })
        );
        assert!(partition(ports(0, 1), 0).is_err());
    }

    #[test]
    fn owner_lookup() {
        let plan = partition(ports(0, 99), 4).unwrap();
        assert_eq!(plan.owner_of(Endpoint::new(0, 30)), Ok(NicId(2)));
        assert_eq!(plan.owner_of(Endpoint::new(0, 0)), Ok(NicId(1)));
        assert_eq!(
            plan.owner_of(Endpoint::new(0, 200)),
            Err(AddrError::NotInExternalSpace(Endpoint::new(0, 200)))
        );
        assert!(plan.owner_of(Endpoint::new(1, 5)).is_err());
    }

    #[test]
    fn allocate_lowest_free_first() {
        let space = ports(40000, 40001);
        let plan = partition(space, 1).unwrap();
        let mut alloc = plan.allocator(NicId(1));
        assert_eq!(alloc.allocate(flow(1)), Ok(Endpoint::new(0, 40000)));
        assert_eq!(alloc.allocate(flow(2)), Ok(Endpoint::new(0, 40001)));
        assert_eq!(
            alloc.allocate(flow(3)),
            Err(AddrError::SubspaceExhausted(NicId(1)))
        );
    }

    #[test]
    fn release_then_allocate_returns_same_endpoint() {
        let plan = partition(ports(40000, 40009), 1).unwrap();
        let mut alloc = plan.allocator(NicId(1));
        let a = alloc.allocate(flow(1)).unwrap();
        let _b = alloc.allocate(flow(2)).unwrap();
        alloc.release(a).unwrap();
        assert!(alloc.is_free(a));
        assert_eq!(alloc.allocate(flow(3)), Ok(a));
    }

    #[test]
    fn release_unallocated_fails() {
        let plan = partition(ports(40000, 40009), 1).unwrap();
        let mut alloc = plan.allocator(NicId(1));
        let ep = Endpoint::new(0, 40003);
        assert_eq!(alloc.release(ep), Err(AddrError::NotAllocated(ep)));
    }

    #[test]
    fn allocate_all_release_all_restores() {
        let plan = partition(ports(0, 9), 2).unwrap();
        let mut alloc = plan.allocator(NicId(2));
        let before = alloc.free();
        let eps: Vec<_> = (0..5).map(|i| alloc.allocate(flow(i)).unwrap()).collect();
        assert_eq!(alloc.free_count(), 0);
        for ep in eps.iter().rev().chain(std::iter::empty()) {
            alloc.release(*ep).unwrap();
        }
        assert_eq!(alloc.free(), before);
        assert_eq!(alloc.cursor, 0);
        assert!(alloc.released.is_empty());
    }

    #[test]
    fn endpoint_space_across_ips() {
        let net: Ipv4Net = "203.0.113.0/30".parse().unwrap();
        let space = EndpointSpace::from_net(net, "1024-1027".parse().unwrap());
        assert_eq!(space.len(), 16);
        assert_eq!(space.endpoint(5), Endpoint::new(net.first() + 1, 1025));
        assert_eq!(
            space.position(Endpoint::new(net.first() + 3, 1027)),
            Some(15)
        );
        assert_eq!(space.position(Endpoint::new(net.first() + 4, 1024)), None);
    }

    #[test]
    fn endpoint_display_roundtrips_through_serde() {
        let ep = Endpoint::new(u32::from(Ipv4Addr::new(203, 0, 113, 7)), 40000);
        let s = serde_json::to_string(&ep).unwrap();
        assert_eq!(s, "\"203.0.113.7:40000\"");
        assert_eq!(serde_json::from_str::<Endpoint>(&s).unwrap(), ep);
    }

    #[test]
    fn net_parsing() {
        let net: Ipv4Net = "10.1.2.3/16".parse().unwrap();
        assert_eq!(net.to_string(), "10.1.0.0/16");
        assert!(net.contains(u32::from(Ipv4Addr::new(10, 1, 255, 255))));
        assert!(!net.contains(u32::from(Ipv4Addr::new(10, 2, 0, 0))));
        assert!("10.0.0.0/33".parse::<Ipv4Net>().is_err());
        assert!("10.0.0".parse::<Ipv4Net>().is_err());
    }
}
