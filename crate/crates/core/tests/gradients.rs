mod common;

use common::*;
use side::model::Ablation;

#[test]
fn op_gradients_match_central_differences() {
    for seed in 0..5 {
        for (op, err) in op_gradient_errors(seed) {
            assert!(err < GRAD_TOL, "seed {seed} op {op}: relative error {err:e}");
        }
    }
}

#[test]
fn model_gradients_match_central_differences() {
    for ablation in Ablation::ALL {
        for (name, err) in model_gradient_errors(3, ablation) {
            assert!(err < GRAD_TOL, "{ablation} {name}: relative error {err:e}");
        }
    }
}

#[test]
fn cross_attention_matches_loop_oracle() {
    for seed in 0..25 {
        let err = cross_attention_discrepancy(seed);
        assert!(err < 1e-10, "seed {seed}: {err:e}");
    }
}

#[test]
fn relative_error_is_zero_for_identical_tensors() {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let t = random_tensor(&mut rng, &[3, 3], 1.0);
    assert_eq!(norm_relative_error(&t, &t), 0.0);
}
