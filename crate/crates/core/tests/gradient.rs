mod common;

#[test]
fn loss_gradient_matches_central_differences() {
    for seed in [1, 2] {
        let r = common::finite_difference_check(seed);
        assert!(r.checked > 500, "{r:?}");
        assert!(r.skipped * 20 < r.checked, "{r:?}");
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}

#[test]
fn layer_pairs_are_adjoint() {
    let v = common::adjoint_violation(3);
    assert!(v < 1e-10, "adjoint violation {v:e}");
}
