//! Exact gradients of the full objective against central finite differences.

mod common;

use common::{fd_check, make_case};

fn check(case: common::Case, seed: u64) {
    let (checked, worst, violation) = fd_check(&case, 200, seed);
    eprintln!("checked {checked} parameters, worst relative error {worst:e}");
    assert!(violation.is_none(), "{}", violation.unwrap());
    assert!(checked > 100);
}

#[test]
fn two_levels_all_signals() {
    check(make_case(1, vec![2, 3], [4, 4, 4], [true; 3]), 10);
}

#[test]
fn three_levels_v_dropped() {
    check(make_case(2, vec![2, 3, 2], [4, 8, 4], [true, true, false]), 11);
}

#[test]
fn single_level_context_dropped() {
    check(make_case(3, vec![3], [3, 4, 5], [false, false, true]), 12);
}
