use proptest::prelude::*;

use hypernat_core::analytics::{any_nic_bound, markov_per_nic_bound, AvailabilityParams};

fn params() -> impl Strategy<Value = AvailabilityParams> {
    (1u32..=64, 1u64..1 << 40).prop_flat_map(|(n, f)| {
        let f = f.max(n as u64);
        (0..=f).prop_map(move |x| AvailabilityParams::new(x, f, n).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn exact_never_exceeds_linear(p in params()) {
        let b = any_nic_bound(&p);
        prop_assert!(b.exact <= b.linear * (1.0 + 1e-12));
        for v in [b.exact, b.linear, markov_per_nic_bound(&p)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn bounds_grow_with_flows_and_nics(p in params(), dx in 0u64..1000, dn in 0u32..4) {
        let x2 = (p.flows + dx).min(p.space);
        let n2 = (p.nics + dn).min(p.space.min(u32::MAX as u64) as u32);
        let q = AvailabilityParams::new(x2, p.space, n2).unwrap();
        let (a, b) = (any_nic_bound(&p), any_nic_bound(&q));
        prop_assert!(b.exact >= a.exact && b.linear >= a.linear);
        prop_assert!(markov_per_nic_bound(&q) >= markov_per_nic_bound(&p));
    }

    #[test]
    fn bounds_shrink_with_space(p in params(), df in 0u64..1 << 20) {
        let q = AvailabilityParams::new(p.flows, p.space + df, p.nics).unwrap();
        let (a, b) = (any_nic_bound(&p), any_nic_bound(&q));
        prop_assert!(b.exact <= a.exact && b.linear <= a.linear);
        prop_assert!(markov_per_nic_bound(&q) <= markov_per_nic_bound(&p));
    }
}
