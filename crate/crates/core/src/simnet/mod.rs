//! Discrete-event model of the sender, the NICs, the host and the receiver.

pub mod config;
pub mod engine;
pub mod packet;
pub mod trace;

pub use config::{ConfigError, FabricConfig, CONFIG_KEYS};
pub use engine::{
    run, saturate, Conservation, EventRow, NicReport, RunOptions, RunOutput, SimError, TdcReport,
    Topology,
};
pub use packet::{Direction, Packet, Stamp};
pub use trace::{
    gen_trace, load_trace, read_trace, write_trace, TraceError, TraceRecord, TraceSpace,
};
