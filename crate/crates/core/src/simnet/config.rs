//! Fabric configuration and its flat `key = value` file format.
//!
//! Latency defaults reproduce the single-connection event timeline measured on
//! the two-NIC testbed; service times are derived from measured saturation
//! throughput (1e6 / pps).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrspace::{EndpointSpace, Ipv4Net, PortRange};
use crate::nic::{ElementTiming, InstallMode};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {msg}")]
    BadValue {
        key: String,
        value: String,
        msg: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Every key: name, default, description. Drives `--help` and validation of
/// config files.
pub const CONFIG_KEYS: &[(&str, &str, &str)] = &[
    (
        "n_nics",
        "2",
        "number of smartNICs in the HyperNAT topology",
    ),
    ("hash_seed", "0", "seed mixed into the ECMP flow hash"),
    (
        "install_mode",
        "passive",
        "rule cloning: passive (fetch on miss) or active (push on create)",
    ),
    (
        "link_us",
        "100",
        "propagation per cable traversal (testbed: arrive at 1st NIC = 100 us)",
    ),
    (
        "nic_service_us",
        "1.382",
        "NIC occupancy per packet pass (1e6 / 723.7 Kpps, one-NIC trace-1)",
    ),
    (
        "server_service_us",
        "0.781",
        "server-NAT occupancy per packet pass (1e6 / 1280.4 Kpps)",
    ),
    (
        "rule_create_us",
        "25",
        "outgoing miss: arrival to rule installed and packet sent (125 - 100)",
    ),
    (
        "rule_build_cost_us",
        "2",
        "NIC occupancy added by building a rule",
    ),
    (
        "server_rule_build_cost_us",
        "1",
        "server-NAT occupancy added by building a rule",
    ),
    (
        "agent_cost_us",
        "2",
        "NIC occupancy per rule message handled",
    ),
    (
        "nic_out_us",
        "7",
        "outgoing table hit, wire to wire (207 - 100 - 100)",
    ),
    (
        "nic_in_us",
        "112",
        "incoming table hit, wire to wire (closes the 621 us steady round trip)",
    ),
    (
        "flush_us",
        "1",
        "fetched rule installed to held packet sent (2269 - 2168 - 100)",
    ),
    (
        "receiver_us",
        "100",
        "receiver: packet received to echo sent (325 - 225)",
    ),
    (
        "echo_tx_us",
        "2",
        "receiver: echo sent to on the wire (427 - 325 - 100)",
    ),
    (
        "coord_hop_us",
        "400",
        "one NIC<->host hop; a fetch crosses four (calibration split)",
    ),
    (
        "fetch_lookup_us",
        "141",
        "owner lookup before replying; 4 x 400 + 141 = 1741 = 2168 - 427",
    ),
    (
        "coord_capacity_mps",
        "0",
        "coordinator messages/s per target link, 0 = unlimited",
    ),
    (
        "sender_rate_pps",
        "0",
        "sender rate; 0 replays trace timestamps",
    ),
    (
        "drain_us",
        "1000000",
        "simulated time after the last send before the run stops",
    ),
    (
        "internal_net",
        "10.0.0.0/16",
        "internal (tenant) address space",
    ),
    (
        "remote_net",
        "198.51.100.0/24",
        "remote (Internet server) address space",
    ),
    ("external_net", "203.0.113.0/28", "external NAT addresses"),
    (
        "external_ports",
        "1024-65535",
        "ports available on each external address",
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricConfig {
    pub n_nics: u32,
    pub hash_seed: u64,
    pub install_mode: InstallMode,
    pub link_us: f64,
    pub nic_service_us: f64,
    pub server_service_us: f64,
    pub rule_create_us: f64,
    pub rule_build_cost_us: f64,
    pub server_rule_build_cost_us: f64,
    pub agent_cost_us: f64,
    pub nic_out_us: f64,
    pub nic_in_us: f64,
    pub flush_us: f64,
    pub receiver_us: f64,
    pub echo_tx_us: f64,
    pub coord_hop_us: f64,
    pub fetch_lookup_us: f64,
    pub coord_capacity_mps: f64,
    pub sender_rate_pps: f64,
    pub drain_us: f64,
    pub internal_net: Ipv4Net,
    pub remote_net: Ipv4Net,
    pub external_net: Ipv4Net,
    pub external_ports: PortRange,
}

impl Default for FabricConfig {
    fn default() -> Self {
        let mut cfg = FabricConfig {
            n_nics: 0,
            hash_seed: 0,
            install_mode: InstallMode::Passive,
            link_us: 0.0,
            nic_service_us: 0.0,
            server_service_us: 0.0,
            rule_create_us: 0.0,
            rule_build_cost_us: 0.0,
            server_rule_build_cost_us: 0.0,
            agent_cost_us: 0.0,
            nic_out_us: 0.0,
            nic_in_us: 0.0,
            flush_us: 0.0,
            receiver_us: 0.0,
            echo_tx_us: 0.0,
            coord_hop_us: 0.0,
            fetch_lookup_us: 0.0,
            coord_capacity_mps: 0.0,
            sender_rate_pps: 0.0,
            drain_us: 0.0,
            internal_net: Ipv4Net::new(0, 32).unwrap(),
            remote_net: Ipv4Net::new(0, 32).unwrap(),
            external_net: Ipv4Net::new(0, 32).unwrap(),
            external_ports: PortRange::new(0, 0).unwrap(),
        };
        for (key, value, _) in CONFIG_KEYS {
            cfg.set(key, value).expect("built-in default parses");
        }
        cfg
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            msg: e.to_string(),
        })
}

impl FabricConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "n_nics" => self.n_nics = parse(key, v)?,
            "hash_seed" => self.hash_seed = parse(key, v)?,
            "install_mode" => self.install_mode = parse(key, v)?,
            "link_us" => self.link_us = parse(key, v)?,
            "nic_service_us" => self.nic_service_us = parse(key, v)?,
            "server_service_us" => self.server_service_us = parse(key, v)?,
            "rule_create_us" => self.rule_create_us = parse(key, v)?,
            "rule_build_cost_us" => self.rule_build_cost_us = parse(key, v)?,
            "server_rule_build_cost_us" => self.server_rule_build_cost_us = parse(key, v)?,
            "agent_cost_us" => self.agent_cost_us = parse(key, v)?,
            "nic_out_us" => self.nic_out_us = parse(key, v)?,
            "nic_in_us" => self.nic_in_us = parse(key, v)?,
            "flush_us" => self.flush_us = parse(key, v)?,
            "receiver_us" => self.receiver_us = parse(key, v)?,
            "echo_tx_us" => self.echo_tx_us = parse(key, v)?,
            "coord_hop_us" => self.coord_hop_us = parse(key, v)?,
            "fetch_lookup_us" => self.fetch_lookup_us = parse(key, v)?,
            "coord_capacity_mps" => self.coord_capacity_mps = parse(key, v)?,
            "sender_rate_pps" => self.sender_rate_pps = parse(key, v)?,
            "drain_us" => self.drain_us = parse(key, v)?,
            "internal_net" => self.internal_net = parse(key, v)?,
            "remote_net" => self.remote_net = parse(key, v)?,
            "external_net" => self.external_net = parse(key, v)?,
            "external_ports" => self.external_ports = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies a `key = value` document on top of `self`. `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                msg: format!("expected key = value, got `{line}`"),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_kv_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = FabricConfig::default();
        cfg.apply_kv(&text)?;
        Ok(cfg)
    }

    /// Serializes every key; `apply_kv` on the output reproduces `self`.
    pub fn to_kv(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (key, _, _) in CONFIG_KEYS {
            let v = &json[*key];
            let text = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let _ = writeln!(out, "{key} = {text}");
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.n_nics == 0 {
            return bad("n_nics must be at least 1".into());
        }
        if self.nic_service_us <= 0.0 || self.server_service_us <= 0.0 {
            return bad("service times must be positive".into());
        }
        let times = [
            ("link_us", self.link_us),
            ("rule_create_us", self.rule_create_us),
            ("rule_build_cost_us", self.rule_build_cost_us),
            ("server_rule_build_cost_us", self.server_rule_build_cost_us),
            ("agent_cost_us", self.agent_cost_us),
            ("nic_out_us", self.nic_out_us),
            ("nic_in_us", self.nic_in_us),
            ("flush_us", self.flush_us),
            ("receiver_us", self.receiver_us),
            ("echo_tx_us", self.echo_tx_us),
            ("coord_hop_us", self.coord_hop_us),
            ("fetch_lookup_us", self.fetch_lookup_us),
            ("coord_capacity_mps", self.coord_capacity_mps),
            ("sender_rate_pps", self.sender_rate_pps),
            ("drain_us", self.drain_us),
        ];
        for (k, v) in times {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{k} must be a non-negative number, got {v}"));
            }
        }
        let nets = [self.internal_net, self.remote_net, self.external_net];
        for (i, a) in nets.iter().enumerate() {
            for b in &nets[i + 1..] {
                if a.contains(b.first()) || b.contains(a.first()) {
                    return bad(format!("address spaces {a} and {b} overlap"));
                }
            }
        }
        Ok(())
    }

    pub fn external_space(&self) -> EndpointSpace {
        EndpointSpace::from_net(self.external_net, self.external_ports)
    }

    fn us(v: f64) -> SimTime {
        SimTime::from_us_f64(v)
    }

    pub fn nic_timing(&self) -> ElementTiming {
        ElementTiming {
            service: Self::us(self.nic_service_us),
            rule_build_cost: Self::us(self.rule_build_cost_us),
            agent_cost: Self::us(self.agent_cost_us),
            out_latency: Self::us(self.nic_out_us),
            in_latency: Self::us(self.nic_in_us),
            rule_create: Self::us(self.rule_create_us),
            fetch_lookup: Self::us(self.fetch_lookup_us),
            flush: Self::us(self.flush_us),
        }
    }

    pub fn server_timing(&self) -> ElementTiming {
        ElementTiming {
            service: Self::us(self.server_service_us),
            rule_build_cost: Self::us(self.server_rule_build_cost_us),
            ..self.nic_timing()
        }
    }

    pub fn link(&self) -> SimTime {
        Self::us(self.link_us)
    }

    pub fn receiver(&self) -> SimTime {
        Self::us(self.receiver_us)
    }

    pub fn echo_tx(&self) -> SimTime {
        Self::us(self.echo_tx_us)
    }

    pub fn coord_hop(&self) -> SimTime {
        Self::us(self.coord_hop_us)
    }

    pub fn drain(&self) -> SimTime {
        Self::us(self.drain_us)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_key_table() {
        let cfg = FabricConfig::default();
        assert_eq!(cfg.n_nics, 2);
        assert_eq!(cfg.install_mode, InstallMode::Passive);
        assert_eq!(cfg.nic_service_us, 1.382);
        assert_eq!(cfg.external_ports, PortRange::new(1024, 65535).unwrap());
        cfg.validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = FabricConfig::default();
        cfg.apply_kv("# comment\nn_nics = 4\ninstall_mode=active  # trailing\n\nlink_us = 50.5\n")
            .unwrap();
        assert_eq!(cfg.n_nics, 4);
        assert_eq!(cfg.install_mode, InstallMode::Active);
        assert_eq!(cfg.link_us, 50.5);
        let mut again = FabricConfig::default();
        again.apply_kv(&cfg.to_kv()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn kv_errors() {
        let mut cfg = FabricConfig::default();
        assert!(matches!(
            cfg.apply_kv("n_nics 4"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            cfg.apply_kv("bogus = 1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            cfg.apply_kv("n_nics = x"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn validation() {
        let cfg = FabricConfig {
            link_us: -1.0,
            ..FabricConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = FabricConfig {
            external_net: "10.0.5.0/24".parse().unwrap(),
            ..FabricConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
