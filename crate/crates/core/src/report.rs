//! Self-describing JSON report for one simulation run.

use serde::{Deserialize, Serialize};

use crate::addrspace::SubspaceSummary;
use crate::analytics::metrics::{cdf_grid, DropCounts, ElementUtilization, Percentiles};
use crate::coordinator::CoordinatorStats;
use crate::simnet::config::FabricConfig;
use crate::simnet::engine::{Conservation, NicReport, RunOutput, TdcReport, Topology};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub topology: Topology,
    /// Everything needed to re-run: the full config plus the trace source.
    pub config: FabricConfig,
    pub config_kv: String,
    pub trace: String,
    pub plan: Vec<SubspaceSummary>,
    pub throughput_pps: f64,
    pub translations: u64,
    pub window_us: (f64, f64),
    pub rtt: Option<Percentiles>,
    pub rtt_cdf: Vec<(f64, f64)>,
    pub drops: DropCounts,
    pub utilization: Vec<ElementUtilization>,
    pub nics: Vec<NicReport>,
    pub coordinator: CoordinatorStats,
    pub tdc: TdcReport,
    pub tdc_pass: bool,
    pub conservation: Conservation,
    pub conservation_holds: bool,
}

impl RunReport {
    pub const CDF_POINTS: usize = 200;

    pub fn new(cfg: &FabricConfig, trace: impl Into<String>, out: &RunOutput) -> Self {
        let m = &out.metrics;
        Self {
            topology: out.topology,
            config: cfg.clone(),
            config_kv: cfg.to_kv(),
            trace: trace.into(),
            plan: out.plan.summary(),
            throughput_pps: m.throughput_pps,
            translations: m.translations,
            window_us: (m.window_start_us, m.window_end_us),
            rtt: m.rtt,
            rtt_cdf: cdf_grid(&m.rtt_samples, Self::CDF_POINTS),
            drops: m.drops,
            utilization: m.utilization.clone(),
            nics: out.nics.clone(),
            coordinator: out.coordinator,
            tdc: out.tdc.clone(),
            tdc_pass: out.tdc.pass(),
            conservation: out.conservation,
            conservation_holds: out.conservation.holds(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
