//! ECMP-style flow dispatch.
//!
//! The access switch and the receiver both hash the header of the packet as
//! transmitted, with no src/dst canonicalization, so the two directions of a
//! connection land on independent NICs.

use serde::{Deserialize, Serialize};

use crate::addrspace::{FiveTuple, NicId};

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a64(u64);

impl Default for Fnv1a64 {
    fn default() -> Self {
        Self(FNV_OFFSET_BASIS)
    }
}

impl Fnv1a64 {
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a64::default();
    h.write(bytes);
    h.finish()
}

/// 13-byte big-endian header encoding: src ip, src port, dst ip, dst port, proto.
pub fn canonical_bytes(ft: &FiveTuple) -> [u8; 13] {
    let mut out = [0u8; 13];
    out[0..4].copy_from_slice(&ft.src.ip.to_be_bytes());
    out[4..6].copy_from_slice(&ft.src.port.to_be_bytes());
    out[6..10].copy_from_slice(&ft.dst.ip.to_be_bytes());
    out[10..12].copy_from_slice(&ft.dst.port.to_be_bytes());
    out[12] = ft.proto;
    out
}

/// FNV-1a over the seed (8 bytes, big-endian) followed by the canonical bytes.
pub fn flow_hash(ft: &FiveTuple, seed: u64) -> u64 {
    let mut h = Fnv1a64::default();
    h.write(&seed.to_be_bytes());
    h.write(&canonical_bytes(ft));
    h.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashConfig {
    pub n_nics: u32,
    pub seed: u64,
}

impl HashConfig {
    pub fn new(n_nics: u32, seed: u64) -> Self {
        assert!(n_nics >= 1, "hash needs at least one NIC");
        Self { n_nics, seed }
    }
}

/// 64-bit avalanche finalizer (MurmurHash3 `fmix64`). A bijection.
///
/// FNV-1a multiplies by an odd prime, so bit k of the output depends only on
/// bits 0..=k of the input bytes. Raw `hash % n` for even `n` therefore
/// reads a byte-order-insensitive parity, which sends both directions of a
/// connection to the same NIC when `n = 2`. Mixing first restores uniform,
/// direction-independent placement.
pub fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

pub fn assign_nic(ft: &FiveTuple, cfg: &HashConfig) -> NicId {
    NicId(1 + (fmix64(flow_hash(ft, cfg.seed)) % cfg.n_nics as u64) as u32)
}
