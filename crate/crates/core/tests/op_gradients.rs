mod common;

#[test]
fn every_op_backward_matches_central_differences() {
    for seed in 0..3 {
        for (op, err) in common::op_gradient_errors(seed) {
            assert!(err < 1e-6, "{op} (seed {seed}): {err}");
        }
    }
}
