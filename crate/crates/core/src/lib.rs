//! NAT gateway whose translation work is split across several smartNICs,
//! with per-NIC external address subspaces and rule cloning between NICs
//! to keep both directions of a connection consistent.

pub mod addrspace;
pub mod analytics;
pub mod coordinator;
pub mod hashing;
pub mod nic;
pub mod report;
pub mod simnet;
pub mod time;

pub use addrspace::{
    partition, AddrError, Endpoint, EndpointSpace, FiveTuple, Ipv4Net, NicId, PortRange, Subspace,
    SubspaceAllocator, SubspacePlan, SubspaceSummary,
};
pub use analytics::{AvailabilityParams, AvailabilityReport, RunMetrics};
pub use coordinator::{CoordError, CoordinatorState, CoordinatorStats};
pub use hashing::{assign_nic, flow_hash, HashConfig};
pub use nic::{
    DropReason, Effect, ElementTiming, InstallMode, NatRule, NatTable, NicCounters, NicError,
    NicState, RuleMessage, RulePayload,
};
pub use report::RunReport;
pub use simnet::{
    run, saturate, FabricConfig, Packet, RunOptions, RunOutput, SimError, Stamp, Topology,
    TraceRecord,
};
pub use time::SimTime;
