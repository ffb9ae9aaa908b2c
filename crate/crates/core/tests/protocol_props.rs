mod common;

use common::CASES;

#[test]
fn passive_and_active_modes_agree() {
    common::mode_equivalence(CASES).unwrap();
}

#[test]
fn install_is_idempotent() {
    common::idempotent_install(CASES).unwrap();
}

#[test]
fn one_fetch_outstanding_per_key() {
    common::single_outstanding_fetch(CASES).unwrap();
}

#[test]
fn held_packets_flush_in_order() {
    common::fifo_flush(CASES).unwrap();
}

#[test]
fn packets_are_conserved() {
    common::conservation(CASES).unwrap();
}

#[test]
fn reruns_are_bit_identical() {
    common::bit_identical_reruns(CASES).unwrap();
}
