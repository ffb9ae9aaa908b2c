//! Throughput, RTT distribution and utilization over simulation output.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simnet::packet::Stamp;
use crate::simnet::EventRow;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("nothing to aggregate")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RttSample {
    pub rtt_us: f64,
    pub first_of_flow: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub p999: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DropCounts {
    pub exhausted: u64,
    pub unknown_connection: u64,
    pub active_miss: u64,
}

impl DropCounts {
    pub fn total(&self) -> u64 {
        self.exhausted + self.unknown_connection + self.active_miss
    }

    fn merge(&mut self, o: &DropCounts) {
        self.exhausted += o.exhausted;
        self.unknown_connection += o.unknown_connection;
        self.active_miss += o.active_miss;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementUtilization {
    pub element: String,
    pub busy_us: f64,
    pub busy_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// NAT translations completed, both directions.
    pub translations: u64,
    pub window_start_us: f64,
    pub window_end_us: f64,
    /// Processed packets per second: translations over the window.
    pub throughput_pps: f64,
    pub emitted: u64,
    pub returned: u64,
    pub in_flight: u64,
    pub drops: DropCounts,
    pub rtt: Option<Percentiles>,
    pub utilization: Vec<ElementUtilization>,
    #[serde(skip)]
    pub rtt_samples: Vec<RttSample>,
}

pub fn throughput(translations: u64, start_us: f64, end_us: f64) -> f64 {
    let span = end_us - start_us;
    if span <= 0.0 {
        0.0
    } else {
        translations as f64 * 1e6 / span
    }
}

/// Nearest-rank percentile of an ascending slice, `q` in `(0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn sorted_rtts(samples: &[RttSample]) -> Vec<f64> {
    let mut v: Vec<f64> = samples.iter().map(|s| s.rtt_us).collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn percentiles(samples: &[RttSample]) -> Option<Percentiles> {
    if samples.is_empty() {
        return None;
    }
    let v = sorted_rtts(samples);
    Some(Percentiles {
        p50: percentile(&v, 50.0),
        p90: percentile(&v, 90.0),
        p99: percentile(&v, 99.0),
        p999: percentile(&v, 99.9),
    })
}

/// `points` evenly spaced quantiles as `(rtt_us, cdf)` pairs.
pub fn cdf_grid(samples: &[RttSample], points: usize) -> Vec<(f64, f64)> {
    if samples.is_empty() || points == 0 {
        return Vec::new();
    }
    let v = sorted_rtts(samples);
    (1..=points)
        .map(|i| {
            let q = i as f64 / points as f64;
            (percentile(&v, q * 100.0), q)
        })
        .collect()
}

pub fn write_cdf_csv(mut w: impl Write, grid: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "rtt_us,cdf")?;
    for (rtt, q) in grid {
        writeln!(w, "{rtt:.3},{q:.6}")?;
    }
    Ok(())
}

/// Fraction of samples strictly above `threshold_us`.
pub fn tail_fraction(samples: &[RttSample], threshold_us: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|s| s.rtt_us > threshold_us).count() as f64 / samples.len() as f64
}

/// Merges runs. Throughput is recomputed over the combined window, not averaged.
pub fn aggregate(runs: &[RunMetrics]) -> Result<RunMetrics, MetricsError> {
    let (first, rest) = runs.split_first().ok_or(MetricsError::EmptyInput)?;
    let mut m = first.clone();
    for r in rest {
        m.translations += r.translations;
        m.window_start_us = m.window_start_us.min(r.window_start_us);
        m.window_end_us = m.window_end_us.max(r.window_end_us);
        m.emitted += r.emitted;
        m.returned += r.returned;
        m.in_flight += r.in_flight;
        m.drops.merge(&r.drops);
        m.rtt_samples.extend_from_slice(&r.rtt_samples);
        for u in &r.utilization {
            match m.utilization.iter_mut().find(|x| x.element == u.element) {
                Some(x) => x.busy_us += u.busy_us,
                None => m.utilization.push(u.clone()),
            }
        }
    }
    let span = m.window_end_us - m.window_start_us;
    for u in &mut m.utilization {
        u.busy_fraction = if span > 0.0 { u.busy_us / span } else { 0.0 };
    }
    m.throughput_pps = throughput(m.translations, m.window_start_us, m.window_end_us);
    m.rtt = percentiles(&m.rtt_samples);
    Ok(m)
}

/// Translation count and window recounted from an event log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecount {
    pub translations: u64,
    pub returned: u64,
    pub window_start_us: f64,
    pub window_end_us: f64,
}

impl EventRecount {
    pub fn throughput_pps(&self) -> f64 {
        throughput(self.translations, self.window_start_us, self.window_end_us)
    }
}

pub fn recount_events(rows: &[EventRow]) -> Result<EventRecount, MetricsError> {
    let mut rc = EventRecount {
        translations: 0,
        returned: 0,
        window_start_us: f64::INFINITY,
        window_end_us: f64::NEG_INFINITY,
    };
    for r in rows {
        let t = r.t.as_us_f64();
        match r.event {
            Stamp::NicArrive | Stamp::AckNicArrive => {
                rc.window_start_us = rc.window_start_us.min(t)
            }
            Stamp::NicDepart | Stamp::AckNicDepart => {
                rc.translations += 1;
                rc.window_end_us = rc.window_end_us.max(t);
            }
            Stamp::Returned => rc.returned += 1,
            _ => {}
        }
    }
    if rc.translations == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(rc)
}
