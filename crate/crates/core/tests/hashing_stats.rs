use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use hypernat_core::{assign_nic, Endpoint, FiveTuple, HashConfig};

fn tuples(n: usize, seed: u64) -> Vec<FiveTuple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            FiveTuple::new(
                Endpoint::new(
                    0x0a00_0000 | rng.random_range(0..65536),
                    rng.random_range(1024..=65535),
                ),
                Endpoint::new(
                    0xc633_6400 | rng.random_range(0..256),
                    rng.random_range(1..=1023),
                ),
                6,
            )
        })
        .collect()
}

#[test]
fn assignment_is_uniform() {
    let sample = tuples(100_000, 11);
    for n in 2..=8u32 {
        for seed in [0u64, 1, 0xdead_beef] {
            let cfg = HashConfig::new(n, seed);
            let mut counts = vec![0f64; n as usize];
            for t in &sample {
                counts[assign_nic(t, &cfg).0 as usize - 1] += 1.0;
            }
            let expected = sample.len() as f64 / n as f64;
            let chi2: f64 = counts
                .iter()
                .map(|c| (c - expected).powi(2) / expected)
                .sum();
            let critical = ChiSquared::new((n - 1) as f64).unwrap().inverse_cdf(0.99);
            assert!(
                chi2 < critical,
                "n={n} seed={seed}: chi2 {chi2:.2} >= {critical:.2}"
            );
        }
    }
}

#[test]
fn directions_hash_independently() {
    // no symmetric hashing: both directions land together about 1/n of the time
    let sample = tuples(50_000, 12);
    for n in 2..=8u32 {
        let cfg = HashConfig::new(n, 0);
        let same = sample
            .iter()
            .filter(|t| assign_nic(t, &cfg) == assign_nic(&t.reversed(), &cfg))
            .count() as f64;
        let m = sample.len() as f64;
        let p = 1.0 / n as f64;
        let sigma = (m * p * (1.0 - p)).sqrt();
        assert!(
            (same - m * p).abs() < 3.0 * sigma,
            "n={n}: {same} vs {}",
            m * p
        );
    }
}

#[test]
fn two_nics_split_within_three_sigma() {
    let cfg = HashConfig::new(2, 0);
    let ones = tuples(10_000, 13)
        .iter()
        .filter(|t| assign_nic(t, &cfg).0 == 1)
        .count() as f64;
    // binomial(10000, 1/2): sigma = 50
    assert!((ones - 5000.0).abs() < 150.0, "{ones}");
}
