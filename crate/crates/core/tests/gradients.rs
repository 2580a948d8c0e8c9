//! Finite-difference checks of every differentiable tape operation and of a
//! complete small model.

mod common;

#[test]
fn every_primitive() {
    for (name, worst) in common::primitive_errors().unwrap() {
        assert!(worst < common::TOL, "{name}: worst relative error {worst:e}");
    }
}

#[test]
fn three_block_transformer() {
    for seed in [1, 2] {
        let worst = common::transformer_error(seed).unwrap();
        assert!(worst < common::TOL, "seed {seed}: worst relative error {worst:e}");
    }
}
