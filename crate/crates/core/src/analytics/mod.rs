pub mod availability;
pub mod metrics;

pub use availability::{
    any_nic_bound, markov_per_nic_bound, mc_overflow, wilson, AnyNicBound, AvailabilityError,
    AvailabilityParams, AvailabilityReport, McEstimate,
};
pub use metrics::{
    aggregate, cdf_grid, percentile, percentiles, recount_events, tail_fraction, throughput,
    write_cdf_csv, DropCounts, ElementUtilization, EventRecount, MetricsError, Percentiles,
    RttSample, RunMetrics,
};
