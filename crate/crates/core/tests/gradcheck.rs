mod common;

use common::{check_case, random_case, width_one_mismatches};

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..24 {
        let r = check_case(&random_case(seed));
        assert!(r.params_checked > 0 && r.thresholds_checked > 0);
        assert!(r.worst_param_rel < 1e-4, "seed {seed}: parameter rel err {}", r.worst_param_rel);
        assert!(r.worst_threshold_rel < 1e-4, "seed {seed}: threshold rel err {}", r.worst_threshold_rel);
    }
}

#[test]
fn width_one_importance_update_is_sign_rule() {
    assert_eq!(width_one_mismatches(1000, 7), 0);
}
