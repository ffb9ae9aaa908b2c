//! Overflow probability of per-NIC address subspaces.
//!
//! X flows land uniformly on N NICs, each owning floor(F/N) external
//! endpoints. A NIC overflows when it receives more flows than it owns.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;
const CHUNK: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AvailabilityError {
    #[error("need F >= N >= 1 (got F={space}, N={nics})")]
    BadSpace { space: u64, nics: u32 },
    #[error("need X <= F (got X={flows}, F={space})")]
    TooManyFlows { flows: u64, space: u64 },
    #[error("trials must be at least 1")]
    NoTrials,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityParams {
    #[serde(rename = "X")]
    pub flows: u64,
    #[serde(rename = "F")]
    pub space: u64,
    #[serde(rename = "N")]
    pub nics: u32,
}

impl AvailabilityParams {
    pub fn new(flows: u64, space: u64, nics: u32) -> Result<Self, AvailabilityError> {
        if nics == 0 || space < nics as u64 {
            return Err(AvailabilityError::BadSpace { space, nics });
        }
        if flows > space {
            return Err(AvailabilityError::TooManyFlows { flows, space });
        }
        Ok(Self { flows, space, nics })
    }

    /// Endpoints owned by each NIC.
    pub fn capacity(&self) -> u64 {
        self.space / self.nics as u64
    }

    /// Expected flows per NIC.
    pub fn expected_per_nic(&self) -> f64 {
        self.flows as f64 / self.nics as f64
    }

    fn ratio(&self) -> f64 {
        self.flows as f64 / self.space as f64
    }
}

/// Markov bound on one NIC overflowing: E(x) / (F/N) = X/F, capped at 1.
/// Evaluated in the reduced form so it is exactly independent of N.
pub fn markov_per_nic_bound(p: &AvailabilityParams) -> f64 {
    p.ratio().min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnyNicBound {
    /// 1 - (1 - X/F)^N
    pub exact: f64,
    /// min(1, XN/F)
    pub linear: f64,
}

pub fn any_nic_bound(p: &AvailabilityParams) -> AnyNicBound {
    let r = p.ratio().min(1.0);
    let exact = if r >= 1.0 {
        1.0
    } else {
        -(p.nics as f64 * (-r).ln_1p()).exp_m1()
    };
    AnyNicBound {
        exact: exact.clamp(0.0, 1.0),
        linear: (r * p.nics as f64).min(1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub trials: u64,
    pub overflows: u64,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl McEstimate {
    /// Half-width of the Wilson interval.
    pub fn ci95(&self) -> f64 {
        (self.ci_hi - self.ci_lo) / 2.0
    }
}

/// Wilson score interval at 95%.
pub fn wilson(successes: u64, trials: u64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One trial: multinomial bin counts drawn as a chain of binomials.
fn trial_overflows(rng: &mut ChaCha8Rng, p: &AvailabilityParams, cap: u64) -> bool {
    let mut remaining = p.flows;
    for k in 0..p.nics {
        let left = p.nics - k;
        let count = if left == 1 {
            remaining
        } else if remaining == 0 {
            0
        } else {
            Binomial::new(remaining, 1.0 / left as f64)
                .expect("valid binomial")
                .sample(rng)
        };
        if count > cap {
            return true;
        }
        remaining -= count;
    }
    false
}

/// Monte Carlo frequency of any NIC overflowing. Trials are grouped in
/// fixed-size chunks, each with its own generator derived from
/// `(seed, chunk)`, so the result does not depend on evaluation order.
pub fn mc_overflow(
    p: &AvailabilityParams,
    trials: u64,
    seed: u64,
) -> Result<McEstimate, AvailabilityError> {
    if trials == 0 {
        return Err(AvailabilityError::NoTrials);
    }
    let cap = p.capacity();
    let mut overflows = 0u64;
    let mut done = 0u64;
    let mut chunk = 0u64;
    while done < trials {
        let n = CHUNK.min(trials - done);
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(chunk)));
        for _ in 0..n {
            overflows += trial_overflows(&mut rng, p, cap) as u64;
        }
        done += n;
        chunk += 1;
    }
    let (ci_lo, ci_hi) = wilson(overflows, trials);
    Ok(McEstimate {
        trials,
        overflows,
        estimate: overflows as f64 / trials as f64,
        ci_lo,
        ci_hi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityReport {
    pub params: AvailabilityParams,
    pub markov_per_nic_bound: f64,
    pub any_nic_bound_exact: f64,
    pub any_nic_bound_linear: f64,
    pub mc_estimate: f64,
    pub mc_ci95: (f64, f64),
    pub n_trials: u64,
}

impl AvailabilityReport {
    pub fn compute(
        p: &AvailabilityParams,
        trials: u64,
        seed: u64,
    ) -> Result<Self, AvailabilityError> {
        let b = any_nic_bound(p);
        let mc = mc_overflow(p, trials, seed)?;
        Ok(Self {
            params: *p,
            markov_per_nic_bound: markov_per_nic_bound(p),
            any_nic_bound_exact: b.exact,
            any_nic_bound_linear: b.linear,
            mc_estimate: mc.estimate,
            mc_ci95: (mc.ci_lo, mc.ci_hi),
            n_trials: trials,
        })
    }

    /// The MC frequency stays under the exact bound up to its own CI.
    pub fn bound_dominates(&self) -> bool {
        let half = (self.mc_ci95.1 - self.mc_ci95.0) / 2.0;
        self.mc_estimate <= self.any_nic_bound_exact + half
    }

    pub const CSV_HEADER: &'static str = "X,F,N,exact,linear,mc,ci_lo,ci_hi";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{:e},{:e},{:e}",
            self.params.flows,
            self.params.space,
            self.params.nics,
            self.any_nic_bound_exact,
            self.any_nic_bound_linear,
            self.mc_estimate,
            self.mc_ci95.0,
            self.mc_ci95.1
        )
    }
}
