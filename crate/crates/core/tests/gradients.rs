mod common;

use common::checks::{attention_check, layer_check, model_check};

const TOL: f64 = 1e-5;

#[test]
fn sage_layer_gradients_match_finite_differences() {
    for seed in 0..40 {
        for activation in [false, true] {
            let err = layer_check(seed, activation);
            assert!(err < TOL, "seed {seed}, relu {activation}: {err:e}");
        }
    }
}

#[test]
fn two_layer_model_gradient_matches_finite_differences() {
    for seed in 0..25 {
        let err = model_check(seed, 2);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn deeper_models_check_too() {
    for seed in 100..110 {
        let err = model_check(seed, 3);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn attention_gradient_matches_finite_differences() {
    for seed in 0..40 {
        let err = attention_check(seed);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}
