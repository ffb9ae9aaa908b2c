use std::collections::BTreeSet;

use proptest::prelude::*;

use hypernat_core::{partition, Endpoint, EndpointSpace, FiveTuple, NicId, PortRange};

fn space(ips: u64, lo: u16, width: u16) -> EndpointSpace {
    EndpointSpace::new(0xcb00_7100, ips, PortRange::new(lo, lo + width).unwrap())
}

fn flow(i: u32) -> FiveTuple {
    FiveTuple::new(
        Endpoint::new(0x0a00_0000 + i, 2000),
        Endpoint::new(0xc633_6409, 80),
        6,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn partition_is_a_contiguous_cover(ips in 1u64..8, lo in 1u16..60000, width in 0u16..200, n in 1u32..12) {
        let sp = space(ips, lo, width);
        prop_assume!(sp.len() >= n as u64);
        let plan = partition(sp, n).unwrap();
        let mut next = 0;
        let sizes: Vec<u64> = plan.subspaces().map(|s| s.len).collect();
        for s in plan.subspaces() {
            prop_assert_eq!(s.start, next);
            next += s.len;
        }
        prop_assert_eq!(next, sp.len());
        let (mn, mx) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        prop_assert!(mx - mn <= 1);
        // remainder goes to the lowest ids
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn owner_matches_subspace(ips in 1u64..8, width in 0u16..300, n in 1u32..12, pick in any::<u64>()) {
        let sp = space(ips, 1024, width);
        prop_assume!(sp.len() >= n as u64);
        let plan = partition(sp, n).unwrap();
        let i = pick % sp.len();
        let ep = sp.endpoint(i);
        let owner = plan.owner_of(ep).unwrap();
        let sub = plan.subspace(owner);
        prop_assert!(sub.start <= i && i < sub.start + sub.len);
        prop_assert_eq!(sp.position(ep), Some(i));
    }

    #[test]
    fn allocator_hands_out_lowest_free(ops in prop::collection::vec(any::<(bool, u8)>(), 1..200), n in 1u32..4) {
        let sp = space(2, 1024, 40);
        let plan = partition(sp, n).unwrap();
        let mut a = plan.allocator(NicId(n));
        let sub = plan.subspace(NicId(n));
        let mut model: BTreeSet<u64> = (sub.start..sub.start + sub.len).collect();
        let mut held: Vec<Endpoint> = Vec::new();
        for (k, (alloc, pick)) in ops.into_iter().enumerate() {
            if alloc || held.is_empty() {
                match a.allocate(flow(k as u32)) {
                    Ok(ep) => {
                        let lowest = model.pop_first().unwrap();
                        prop_assert_eq!(sp.position(ep), Some(lowest));
                        prop_assert_eq!(plan.owner_of(ep).unwrap(), NicId(n));
                        held.push(ep);
                    }
                    Err(_) => prop_assert!(model.is_empty()),
                }
            } else {
                let ep = held.swap_remove(pick as usize % held.len());
                a.release(ep).unwrap();
                model.insert(sp.position(ep).unwrap());
            }
            prop_assert_eq!(a.free_count(), model.len() as u64);
            prop_assert_eq!(a.allocated_count(), held.len());
        }
    }
}
