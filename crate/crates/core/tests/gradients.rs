mod common;

use common::{dqn_check, predictor_check, selector_check, FdReport};

fn check_family(name: &str, f: fn(u64) -> (FdReport, usize)) {
    let (mut kinks, mut total) = (0, 0);
    for seed in 0..20 {
        let (r, n) = f(seed);
        assert!(n <= 1000, "{name} net {seed} has {n} parameters");
        assert!(r.max_rel_error < 1e-4, "{name} net {seed}: {r:?}");
        kinks += r.kinks;
        total += r.coordinates;
    }
    // Kinks are rare; many of them would mean the slopes really disagree.
    assert!(kinks * 100 <= total, "{name}: {kinks} of {total} coordinates skipped");
}

#[test]
fn predictor_gradients_match_finite_differences() {
    check_family("predictor", predictor_check);
}

#[test]
fn selector_gradients_match_finite_differences() {
    check_family("selector", selector_check);
}

#[test]
fn dqn_gradients_match_finite_differences() {
    check_family("dqn", dqn_check);
}
